//! End-to-end orchestration with resumable, content-hashed artifacts.
//!
//! A stage is skipped when its cache key (the config sections it reads plus
//! the hashes of its input files) matches the manifest and every recorded
//! output is intact. Rerunning after deleting one artifact therefore
//! recomputes only its producer; downstream keys stay equal as long as the
//! recomputed bytes are identical.

mod artifacts;
mod config;
mod stages;

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dnae::RoundLog;
use crate::eval::EvalReport;
use crate::risk::RiskReport;
use crate::{io, Error, Result};

pub use artifacts::{DirLock, Manifest, StageRecord, LOCK, MANIFEST};
pub use config::{
    ClusterConfig, DataConfig, EvalConfig, FederationConfig, GraphMode, HypergraphConfig,
    PipelineConfig, RiskConfig, SegmentRows, SEED_ENV,
};
pub use stages::{
    explained_rows, load_latent, load_segmentation, load_space, load_table, producer, Details,
    ExplainSummary, LatentMeta, TableMeta, EMBEDDING_BIN, EVAL_JSON, EVAL_TXT, EXPLAIN_SUMMARY,
    EXPLANATIONS, FEATURES, HYPERGRAPH, LATENT_BIN, MODEL_BIN, POLICY, RECON, RISK_CSV,
    RISK_REPORT, ROUND_LOGS, SEGMENTATION, SEGMENTATION_SUMMARY, SHARDS, SPLIT, TABLE,
};

pub const RUN_REPORT: &str = "run_report.json";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Train,
    Embed,
    Cluster,
    Risk,
    Explain,
    Policy,
    Eval,
}

impl Stage {
    /// Execution order. Explanations precede policy so the table can carry
    /// the top attributes of each row.
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Train,
        Stage::Embed,
        Stage::Cluster,
        Stage::Risk,
        Stage::Explain,
        Stage::Policy,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Risk => "risk",
            Stage::Explain => "explain",
            Stage::Policy => "policy",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    pub seconds: f64,
    pub details: Details,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySummary {
    pub rows: usize,
    pub allow: usize,
    pub block: usize,
}

/// Consolidated result of a full run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
    pub total_seconds: f64,
    pub round_logs: Vec<RoundLog>,
    pub risk: RiskReport,
    pub explain: ExplainSummary,
    pub policy: PolicySummary,
    pub eval: EvalReport,
}

impl RunReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run {} (seed {})", self.output_dir.display(), self.seed);
        let _ = writeln!(s, "\nstage      status    seconds");
        for o in &self.stages {
            let status = match o.status {
                StageStatus::Ran => "ran",
                StageStatus::Skipped => "skipped",
            };
            let _ = writeln!(s, "{:<10} {:<9} {:>8.2}", o.stage.name(), status, o.seconds);
        }
        let _ = writeln!(s, "total                {:>8.2}", self.total_seconds);
        if let Some(last) = self.round_logs.last() {
            let opt = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.5}"));
            let _ = writeln!(
                s,
                "\ntraining   {} rounds, train mse {:.5}, val benign {}, val attack {}",
                self.round_logs.len(),
                last.train_benign_mse,
                opt(last.val_benign_mse),
                opt(last.val_attack_mse)
            );
        }
        let _ = writeln!(
            s,
            "risk       tau {:.4} ({}), otsu {:.4}, safe clusters {:.1}%",
            self.risk.tau,
            self.risk.threshold_policy,
            self.risk.candidates.otsu,
            100.0 * self.risk.safe_fraction()
        );
        let _ = writeln!(
            s,
            "policy     {} rows, {} allow, {} block",
            self.policy.rows, self.policy.allow, self.policy.block
        );
        if self.explain.enabled {
            let _ = writeln!(
                s,
                "explain    {} rows explained",
                self.explain.explained_rows
            );
        }
        let _ = writeln!(s, "\n{}", self.eval.render_text());
        s
    }
}

/// One pipeline instance bound to an output directory it holds locked.
#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    dir: PathBuf,
    manifest: Manifest,
    _lock: DirLock,
}

impl Pipeline {
    /// Validates the config, resolves seeds and claims the output directory.
    pub fn open(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        let dir = config.output_dir.clone();
        let lock = DirLock::acquire(&dir)?;
        let manifest = Manifest::load(&dir)?;
        io::write_bytes(
            &dir.join(RESOLVED_CONFIG),
            config.to_toml_string()?.as_bytes(),
        )?;
        Ok(Self {
            config,
            dir,
            manifest,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key(&self, stage: Stage, inputs: &[&str]) -> Result<String> {
        let mut text = format!(
            "{}\n{}\n",
            stage.name(),
            stages::config_slice(stage, &self.config)?
        );
        for name in inputs {
            let p = self.dir.join(name);
            if !p.is_file() {
                return Err(Error::MissingArtifact {
                    artifact: name.to_string(),
                    stage: producer(name).name().to_string(),
                });
            }
            let _ = writeln!(text, "{name} {}", io::hash_file(&p)?);
        }
        Ok(io::sha256_hex(text.as_bytes()))
    }

    /// Runs one stage unless it is current (or `force` is set). Failures are
    /// reported with the stage name; artifacts already written are kept.
    pub fn run_stage(&mut self, stage: Stage, force: bool) -> Result<StageOutcome> {
        let wrap = |e: Error| Error::Stage {
            stage: stage.name().to_string(),
            source: Box::new(e),
        };
        let (inputs, outputs) = stages::files(stage, &self.config);
        let key = self.key(stage, &inputs).map_err(wrap)?;
        if !force
            && self
                .manifest
                .is_current(&self.dir, stage.name(), &key)
                .map_err(wrap)?
        {
            log::info!("{stage}: up to date");
            return Ok(StageOutcome {
                stage,
                status: StageStatus::Skipped,
                seconds: 0.0,
                details: Details::new(),
            });
        }
        log::info!("{stage}: running");
        let t = Instant::now();
        let details = stages::run(stage, &self.config, &self.dir).map_err(wrap)?;
        let seconds = t.elapsed().as_secs_f64();
        let mut hashes = std::collections::BTreeMap::new();
        for name in outputs {
            hashes.insert(
                name.to_string(),
                io::hash_file(&self.dir.join(name)).map_err(wrap)?,
            );
        }
        self.manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                key,
                outputs: hashes,
            },
        );
        self.manifest.save(&self.dir).map_err(wrap)?;
        log::info!("{stage}: done in {seconds:.2}s");
        Ok(StageOutcome {
            stage,
            status: StageStatus::Ran,
            seconds,
            details,
        })
    }

    /// Every stage in order, then the consolidated run report.
    pub fn run(&mut self) -> Result<RunReport> {
        let t = Instant::now();
        let mut outcomes = Vec::with_capacity(Stage::ALL.len());
        for stage in Stage::ALL {
            outcomes.push(self.run_stage(stage, false)?);
        }
        let report = self.report(outcomes, t.elapsed().as_secs_f64())?;
        io::write_json(&self.dir.join(RUN_REPORT), &report)?;
        Ok(report)
    }

    fn report(&self, stages: Vec<StageOutcome>, total_seconds: f64) -> Result<RunReport> {
        let policy_csv = io::read_bytes(&self.dir.join(POLICY))?;
        let mut rdr = csv::Reader::from_reader(policy_csv.as_slice());
        let headers = rdr.headers()?.clone();
        let col = headers
            .iter()
            .position(|h| h == "Decision")
            .ok_or_else(|| Error::MissingColumn("Decision".into()))?;
        let (mut rows, mut allow) = (0, 0);
        for rec in rdr.records() {
            let rec = rec?;
            rows += 1;
            allow += usize::from(rec.get(col) == Some("Allow"));
        }
        Ok(RunReport {
            variant: self.config.variant(),
            seed: self.config.seed,
            output_dir: self.dir.clone(),
            stages,
            total_seconds,
            round_logs: stages::read_round_logs(&self.dir)?,
            risk: io::read_json(&self.dir.join(RISK_REPORT))?,
            explain: io::read_json(&self.dir.join(EXPLAIN_SUMMARY))?,
            policy: PolicySummary {
                rows,
                allow,
                block: rows - allow,
            },
            eval: io::read_json(&self.dir.join(EVAL_JSON))?,
        })
    }
}

/// Reads the run report of a finished output directory.
pub fn read_run_report(dir: &Path) -> Result<RunReport> {
    let p = dir.join(RUN_REPORT);
    if !p.is_file() {
        return Err(Error::MissingArtifact {
            artifact: RUN_REPORT.into(),
            stage: "run".into(),
        });
    }
    io::read_json(&p)
}
