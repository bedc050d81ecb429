//! `microseg`: run the pipeline end to end or one stage at a time.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use microseg::eval::EvalReport;
use microseg::pipeline::{read_run_report, Pipeline, PipelineConfig, Stage, EVAL_JSON};

#[derive(Debug, Parser)]
#[command(
    name = "microseg",
    version,
    about = "Explainable micro-segmentation of network flows"
)]
struct Cli {
    /// TOML config file; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set hypergraph.mode=none`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Threshold policy: otsu, p50..p95, or a value in [0, 1].
    #[arg(long, global = true)]
    threshold: Option<String>,
    /// Explain only this many seed-sampled rows.
    #[arg(long, global = true)]
    explain_sample: Option<usize>,
    /// Log verbosity: error, warn, info, debug.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage, skipping those whose inputs are unchanged.
    Run {
        /// Print the consolidated text report.
        #[arg(long)]
        report: bool,
    },
    Ingest(StageArgs),
    Train(StageArgs),
    Embed(StageArgs),
    Cluster(StageArgs),
    Risk(StageArgs),
    Explain(StageArgs),
    Policy(StageArgs),
    Eval(StageArgs),
    /// Print the report of a finished run.
    Report,
    /// Print the resolved config as TOML.
    Config,
}

#[derive(Debug, clap::Args)]
struct StageArgs {
    /// Recompute even if the stage is up to date.
    #[arg(long)]
    force: bool,
    /// Print the evaluation report afterwards.
    #[arg(long)]
    report: bool,
}

impl Command {
    fn stage(&self) -> Option<(Stage, &StageArgs)> {
        Some(match self {
            Command::Ingest(a) => (Stage::Ingest, a),
            Command::Train(a) => (Stage::Train, a),
            Command::Embed(a) => (Stage::Embed, a),
            Command::Cluster(a) => (Stage::Cluster, a),
            Command::Risk(a) => (Stage::Risk, a),
            Command::Explain(a) => (Stage::Explain, a),
            Command::Policy(a) => (Stage::Policy, a),
            Command::Eval(a) => (Stage::Eval, a),
            _ => return None,
        })
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut overrides = Vec::new();
    if let Some(out) = &cli.out {
        overrides.push(format!(
            "output_dir={}",
            toml_string(&out.display().to_string())
        ));
    }
    if let Some(t) = &cli.threshold {
        overrides.push(format!("risk.threshold={}", toml_string(t)));
    }
    if let Some(n) = cli.explain_sample {
        overrides.push(format!("explain.sample={n}"));
    }
    overrides.extend(cli.overrides.iter().cloned());
    Ok(PipelineConfig::build(cli.config.as_deref(), &overrides)?)
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn print_eval(dir: &Path) -> Result<()> {
    let report: EvalReport = microseg::io::read_json(&dir.join(EVAL_JSON))
        .context("no evaluation report yet; run `eval`")?;
    print!("{}", report.render_text());
    Ok(())
}

fn real_main(cli: Cli) -> Result<()> {
    let config = build_config(&cli)?;
    match &cli.command {
        Command::Config => {
            config.validate()?;
            print!("{}", config.resolved().to_toml_string()?);
        }
        Command::Report => print!("{}", read_run_report(&config.output_dir)?.render_text()),
        Command::Run { report } => {
            let mut p = Pipeline::open(&config)?;
            let r = p.run()?;
            if *report {
                print!("{}", r.render_text());
            } else {
                println!(
                    "{}: {} stages, {:.1}s, artifacts in {}",
                    r.variant,
                    r.stages.len(),
                    r.total_seconds,
                    p.dir().display()
                );
            }
        }
        cmd => {
            let (stage, args) = cmd.stage().expect("stage subcommand");
            let mut p = Pipeline::open(&config)?;
            let outcome = p.run_stage(stage, args.force)?;
            println!("{}: {:?} in {:.2}s", stage, outcome.status, outcome.seconds);
            for (k, v) in &outcome.details {
                println!("  {k} = {v}");
            }
            if args.report {
                print_eval(p.dir())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
