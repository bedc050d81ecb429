//! Stage bodies. Each reads its inputs from the output directory and writes
//! its artifacts there; nothing is passed in memory between stages.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{GraphMode, PipelineConfig, SegmentRows};
use super::Stage;
use crate::dnae::{train_federated, ModelParams, RoundLog};
use crate::eval::{classification_metrics, ClassificationMetrics, EvalReport};
use crate::explain::{
    holdout_split, read_explanations, write_explanations, ExplainModel, Method, ShapMode,
    MAX_EXACT_DIM,
};
use crate::hypergraph::{
    knn_hyperedges, laplacian, manifold_hyperedges, spectral_embed, SpectralEmbedding,
};
use crate::ingest::{
    dirichlet_partition, fit_preprocess, generate_synthetic, load_csv, split, ClientShard,
    EncoderState, FlowMeta, FlowTable, ScalerState, SplitIndex,
};
use crate::io::{self, MatrixShape};
use crate::risk::{generate_policy, RiskReport};
use crate::segment::{hdbscan, minibatch_kmeans, Clusterer, Segmentation};
use crate::{rng, Error, Result};

pub const SPLIT: &str = "split.json";
pub const SHARDS: &str = "shards.json";
pub const FEATURES: &str = "features.bin";
pub const TABLE: &str = "table.json";
pub const MODEL_BIN: &str = "model.bin";
pub const MODEL_JSON: &str = "model.json";
pub const ROUND_LOGS: &str = "round_logs.jsonl";
pub const LATENT_BIN: &str = "latent.bin";
pub const LATENT_JSON: &str = "latent.json";
pub const RECON: &str = "recon_error.json";
pub const HYPERGRAPH: &str = "hypergraph.jsonl";
pub const EMBEDDING_BIN: &str = "embedding.bin";
pub const EMBEDDING_JSON: &str = "embedding.json";
pub const SEGMENTATION: &str = "segmentation.csv";
pub const SEGMENTATION_SUMMARY: &str = "segmentation.json";
pub const RISK_REPORT: &str = "risk_report.json";
pub const RISK_CSV: &str = "risk.csv";
pub const EXPLANATIONS: &str = "explanations.jsonl";
pub const EXPLAIN_SUMMARY: &str = "explain_summary.json";
pub const POLICY: &str = "policy.csv";
pub const EVAL_JSON: &str = "eval_report.json";
pub const EVAL_TXT: &str = "eval_report.txt";

/// Stage that produces `artifact`.
pub fn producer(artifact: &str) -> Stage {
    match artifact {
        SPLIT | SHARDS | FEATURES | TABLE => Stage::Ingest,
        MODEL_BIN | MODEL_JSON | ROUND_LOGS => Stage::Train,
        LATENT_BIN | LATENT_JSON | RECON | HYPERGRAPH | EMBEDDING_BIN | EMBEDDING_JSON => {
            Stage::Embed
        }
        SEGMENTATION | SEGMENTATION_SUMMARY => Stage::Cluster,
        RISK_REPORT | RISK_CSV => Stage::Risk,
        EXPLANATIONS | EXPLAIN_SUMMARY => Stage::Explain,
        POLICY => Stage::Policy,
        _ => Stage::Eval,
    }
}

/// Matrix the clusterer and explainers operate on.
fn space_files(cfg: &PipelineConfig) -> [&'static str; 2] {
    match cfg.hypergraph.mode {
        GraphMode::None => [LATENT_BIN, LATENT_JSON],
        _ => [EMBEDDING_BIN, EMBEDDING_JSON],
    }
}

/// (inputs, outputs) of a stage under `cfg`.
pub fn files(stage: Stage, cfg: &PipelineConfig) -> (Vec<&'static str>, Vec<&'static str>) {
    let space = space_files(cfg);
    match stage {
        Stage::Ingest => (vec![], vec![SPLIT, SHARDS, FEATURES, TABLE]),
        Stage::Train => (
            vec![SPLIT, SHARDS, FEATURES, TABLE],
            vec![MODEL_BIN, MODEL_JSON, ROUND_LOGS],
        ),
        Stage::Embed => {
            let mut out = vec![LATENT_BIN, LATENT_JSON, RECON];
            if cfg.hypergraph.mode != GraphMode::None {
                out.extend([HYPERGRAPH, EMBEDDING_BIN, EMBEDDING_JSON]);
            }
            (vec![SPLIT, FEATURES, TABLE, MODEL_BIN, MODEL_JSON], out)
        }
        Stage::Cluster => (
            vec![LATENT_JSON, space[0], space[1]],
            vec![SEGMENTATION, SEGMENTATION_SUMMARY],
        ),
        Stage::Risk => (
            vec![RECON, SEGMENTATION, SEGMENTATION_SUMMARY],
            vec![RISK_REPORT, RISK_CSV],
        ),
        Stage::Explain => {
            let mut inp = vec![
                FEATURES,
                TABLE,
                LATENT_BIN,
                LATENT_JSON,
                SEGMENTATION,
                SEGMENTATION_SUMMARY,
            ];
            if cfg.hypergraph.mode != GraphMode::None {
                inp.extend(space);
            }
            (inp, vec![EXPLANATIONS, EXPLAIN_SUMMARY])
        }
        Stage::Policy => (
            vec![
                TABLE,
                SEGMENTATION,
                SEGMENTATION_SUMMARY,
                RISK_REPORT,
                EXPLANATIONS,
            ],
            vec![POLICY],
        ),
        Stage::Eval => (
            vec![
                TABLE,
                LATENT_JSON,
                space[0],
                space[1],
                SEGMENTATION,
                SEGMENTATION_SUMMARY,
                EXPLAIN_SUMMARY,
            ],
            vec![EVAL_JSON, EVAL_TXT],
        ),
    }
}

/// JSON of the config sections a stage depends on; part of its cache key.
pub fn config_slice(stage: Stage, cfg: &PipelineConfig) -> Result<String> {
    let v = match stage {
        Stage::Ingest => {
            serde_json::json!({ "seed": cfg.seed, "data": cfg.data, "federation": cfg.federation })
        }
        Stage::Train => serde_json::json!({ "train": cfg.train }),
        Stage::Embed => {
            serde_json::json!({ "segment_rows": cfg.data.segment_rows, "hypergraph": cfg.hypergraph })
        }
        Stage::Cluster => serde_json::json!({ "cluster": cfg.cluster }),
        Stage::Risk => serde_json::json!({ "risk": cfg.risk }),
        Stage::Explain => serde_json::json!({ "seed": cfg.seed, "explain": cfg.explain }),
        Stage::Policy => serde_json::json!({}),
        Stage::Eval => {
            serde_json::json!({ "seed": cfg.seed, "eval": cfg.eval, "variant": cfg.variant() })
        }
    };
    Ok(serde_json::to_string(&v)?)
}

/// Sub-step timings and counters reported by a stage.
pub type Details = BTreeMap<String, f64>;

fn timed<T>(details: &mut Details, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    details.insert(format!("{name}_seconds"), t.elapsed().as_secs_f64());
    Ok(out)
}

pub fn run(stage: Stage, cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    match stage {
        Stage::Ingest => ingest(cfg, dir),
        Stage::Train => train(cfg, dir),
        Stage::Embed => embed(cfg, dir),
        Stage::Cluster => cluster(cfg, dir),
        Stage::Risk => risk(cfg, dir),
        Stage::Explain => explain(cfg, dir),
        Stage::Policy => policy(dir),
        Stage::Eval => eval(cfg, dir),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableMeta {
    pub shape: MatrixShape,
    pub feature_names: Vec<String>,
    pub sidecar: Vec<FlowMeta>,
    pub scaler: ScalerState,
    pub encoder: EncoderState,
    pub unseen_categories: usize,
    pub dropped_rows: usize,
}

pub fn load_table(dir: &Path) -> Result<FlowTable> {
    let meta: TableMeta = io::read_json(&dir.join(TABLE))?;
    let features = io::read_matrix(&dir.join(FEATURES), &meta.shape)?;
    Ok(FlowTable {
        features,
        feature_names: meta.feature_names,
        sidecar: meta.sidecar,
        scaler: meta.scaler,
        encoder: meta.encoder,
        unseen_categories: meta.unseen_categories,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentMeta {
    pub shape: MatrixShape,
    /// Table row of each latent row.
    pub row_ids: Vec<usize>,
}

pub fn load_latent(dir: &Path) -> Result<(Array2<f64>, Vec<usize>)> {
    let meta: LatentMeta = io::read_json(&dir.join(LATENT_JSON))?;
    Ok((
        io::read_matrix(&dir.join(LATENT_BIN), &meta.shape)?,
        meta.row_ids,
    ))
}

/// Spectral coordinates, or the latent codes in the no-hypergraph ablation.
pub fn load_space(cfg: &PipelineConfig, dir: &Path) -> Result<Array2<f64>> {
    match cfg.hypergraph.mode {
        GraphMode::None => Ok(load_latent(dir)?.0),
        _ => Ok(SpectralEmbedding::load(dir, "embedding")?.0.coords),
    }
}

pub fn load_segmentation(dir: &Path) -> Result<(Segmentation, Vec<usize>)> {
    Segmentation::load(&dir.join(SEGMENTATION), &dir.join(SEGMENTATION_SUMMARY))
}

fn ingest(cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    let mut details = Details::new();
    let raw = timed(&mut details, "load", || {
        match (&cfg.data.path, &cfg.data.schema) {
            (Some(p), Some(schema)) => load_csv(p, schema),
            _ => generate_synthetic(&cfg.data.synthetic),
        }
    })?;
    let split = split(
        raw.len(),
        cfg.data.train_fraction,
        cfg.data.val_fraction,
        cfg.seed,
    )?;
    let table = fit_preprocess(&raw, &split.train)?;
    let shards = if cfg.federation.centralized {
        vec![ClientShard {
            client_id: 0,
            row_indices: split.train.clone(),
            n_k: split.train.len(),
        }]
    } else {
        dirichlet_partition(
            &table.sidecar,
            &split.train,
            cfg.federation.clients,
            cfg.federation.alpha,
            cfg.seed,
        )?
    };
    io::write_json(&dir.join(SPLIT), &split)?;
    io::write_json(&dir.join(SHARDS), &shards)?;
    let shape = io::write_matrix(&dir.join(FEATURES), &table.features)?;
    io::write_json(
        &dir.join(TABLE),
        &TableMeta {
            shape,
            feature_names: table.feature_names.clone(),
            sidecar: table.sidecar,
            scaler: table.scaler,
            encoder: table.encoder,
            unseen_categories: table.unseen_categories,
            dropped_rows: raw.dropped_rows,
        },
    )?;
    details.insert("rows".into(), raw.len() as f64);
    details.insert("dropped_rows".into(), raw.dropped_rows as f64);
    details.insert("features".into(), table.features.ncols() as f64);
    Ok(details)
}

fn train(cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    let table = load_table(dir)?;
    let split: SplitIndex = io::read_json(&dir.join(SPLIT))?;
    let shards: Vec<ClientShard> = io::read_json(&dir.join(SHARDS))?;
    let trained = train_federated(&table, &shards, &split, &cfg.train)?;
    let hash = io::sha256_hex(serde_json::to_string(&cfg.train)?.as_bytes());
    trained.params.save(dir, "model", &hash)?;
    io::write_json_lines(&dir.join(ROUND_LOGS), &trained.logs)?;
    let mut details = Details::new();
    details.insert("rounds".into(), trained.logs.len() as f64);
    if let Some(last) = trained.logs.last() {
        details.insert("final_train_mse".into(), last.train_benign_mse);
    }
    Ok(details)
}

fn segment_row_ids(cfg: &PipelineConfig, split: &SplitIndex, n: usize) -> Vec<usize> {
    match cfg.data.segment_rows {
        SegmentRows::Test => split.test.clone(),
        SegmentRows::All => (0..n).collect(),
    }
}

fn embed(cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    let mut details = Details::new();
    let table = load_table(dir)?;
    let split: SplitIndex = io::read_json(&dir.join(SPLIT))?;
    let (params, _) = ModelParams::load(dir, "model")?;
    let row_ids = segment_row_ids(cfg, &split, table.n_rows());
    let x = table.features.select(Axis(0), &row_ids);
    let (z, recon) = timed(&mut details, "encode", || {
        Ok((
            params.encode_all(x.view())?,
            params.reconstruction_error(x.view())?,
        ))
    })?;
    let shape = io::write_matrix(&dir.join(LATENT_BIN), &z)?;
    io::write_json(&dir.join(LATENT_JSON), &LatentMeta { shape, row_ids })?;
    io::write_json(&dir.join(RECON), &recon)?;
    details.insert("rows".into(), z.nrows() as f64);

    let h = &cfg.hypergraph;
    let Some(mode) = h.mode.hyperedge_mode() else {
        return Ok(details);
    };
    let graph = timed(&mut details, "hypergraph", || match h.mode {
        GraphMode::KnnOnly => knn_hyperedges(z.view(), h.k, None),
        _ => manifold_hyperedges(z.view(), h.k, h.t, None),
    })?;
    graph.write_json_lines(&dir.join(HYPERGRAPH))?;
    details.insert("hyperedges".into(), graph.n_edges() as f64);
    let emb = timed(&mut details, "eigen", || {
        spectral_embed(&laplacian(&graph)?, &h.eigen)
    })?;
    emb.save(dir, "embedding", mode, &h.eigen)?;
    details.insert("eigen_iterations".into(), emb.iterations as f64);
    Ok(details)
}

fn cluster(cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    let (_, row_ids) = load_latent(dir)?;
    let x = load_space(cfg, dir)?;
    let seg = match cfg.cluster.clusterer {
        Clusterer::MinibatchKmeans => minibatch_kmeans(x.view(), &cfg.cluster.kmeans)?.segmentation,
        Clusterer::Hdbscan => hdbscan(x.view(), &cfg.cluster.hdbscan)?.segmentation,
    };
    seg.save(
        &dir.join(SEGMENTATION),
        &dir.join(SEGMENTATION_SUMMARY),
        &row_ids,
    )?;
    let mut details = Details::new();
    details.insert("clusters".into(), seg.n_clusters as f64);
    details.insert("noise".into(), seg.n_noise() as f64);
    Ok(details)
}

#[derive(Debug, Serialize, Deserialize)]
struct RiskRow {
    row_id: usize,
    cluster_id: i64,
    e_tilde: f64,
    o_tilde: f64,
    r: f64,
}

fn risk(cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    let (seg, row_ids) = load_segmentation(dir)?;
    let recon: Vec<f64> = io::read_json(&dir.join(RECON))?;
    let report = RiskReport::compute(
        &recon,
        &seg.outlierness,
        &seg.labels,
        cfg.risk.w1,
        cfg.risk.w2,
        cfg.risk.threshold,
    )?;
    io::write_json(&dir.join(RISK_REPORT), &report)?;
    let path = dir.join(RISK_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    for i in 0..row_ids.len() {
        w.serialize(RiskRow {
            row_id: row_ids[i],
            cluster_id: seg.labels[i],
            e_tilde: report.e_tilde[i],
            o_tilde: report.o_tilde[i],
            r: report.r[i],
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let mut details = Details::new();
    details.insert("tau".into(), report.tau);
    details.insert("safe_fraction".into(), report.safe_fraction());
    Ok(details)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub enabled: bool,
    pub shap_mode: ShapMode,
    pub explained_rows: usize,
    pub holdout_rows: usize,
    /// Surrogate agreement with the clusterer on held-out rows.
    pub fidelity: Option<ClassificationMetrics>,
    pub attribute_map_rmse: Option<f64>,
}

/// Local indices of the rows to explain: all, or a seed-fixed sorted sample.
pub fn explained_rows(n: usize, sample: Option<usize>, seed: u64) -> Vec<usize> {
    match sample {
        Some(s) if s < n => {
            let mut v =
                index::sample(&mut rng::stream(seed, rng::tag::EXPLAIN_SAMPLE, 0), n, s).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    }
}

fn explain(cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    let mut details = Details::new();
    let mut ecfg = cfg.explain;
    if !ecfg.enabled {
        write_explanations(&dir.join(EXPLANATIONS), &[])?;
        io::write_json(
            &dir.join(EXPLAIN_SUMMARY),
            &ExplainSummary {
                enabled: false,
                shap_mode: ecfg.shap_mode,
                explained_rows: 0,
                holdout_rows: 0,
                fidelity: None,
                attribute_map_rmse: None,
            },
        )?;
        return Ok(details);
    }
    let table = load_table(dir)?;
    let (z, row_ids) = load_latent(dir)?;
    let x = load_space(cfg, dir)?;
    let (seg, _) = load_segmentation(dir)?;
    if ecfg.shap_mode == ShapMode::Exact && x.ncols() > MAX_EXACT_DIM {
        log::warn!(
            "{} explained dimensions exceed exact SHAP limit {MAX_EXACT_DIM}; using sampled mode",
            x.ncols()
        );
        ecfg.shap_mode = ShapMode::Sampled;
    }
    let features = table.features.select(Axis(0), &row_ids);
    let (fit_rows, hold_rows) = holdout_split(x.nrows(), ecfg.holdout_fraction, cfg.seed);
    let model = timed(&mut details, "fit", || {
        ExplainModel::fit(
            x.view(),
            z.view(),
            features.view(),
            &table.feature_names,
            &seg.labels,
            &fit_rows,
            &ecfg,
            cfg.seed,
        )
    })?;
    let held = x.select(Axis(0), &hold_rows);
    let truth: Vec<i64> = hold_rows.iter().map(|&i| seg.labels[i]).collect();
    let fidelity = classification_metrics(&truth, &model.surrogate.predict_all(held.view()))?;

    let rows = explained_rows(x.nrows(), ecfg.sample, cfg.seed);
    let xs = x.as_standard_layout();
    let pairs = timed(&mut details, "attribution", || {
        rows.par_iter()
            .map(|&i| {
                model.explain(
                    row_ids[i],
                    xs.row(i).as_slice().expect("standard layout"),
                    &ecfg,
                    cfg.seed,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let items: Vec<_> = pairs.into_iter().flat_map(|(l, s)| [l, s]).collect();
    write_explanations(&dir.join(EXPLANATIONS), &items)?;
    io::write_json(
        &dir.join(EXPLAIN_SUMMARY),
        &ExplainSummary {
            enabled: true,
            shap_mode: ecfg.shap_mode,
            explained_rows: rows.len(),
            holdout_rows: hold_rows.len(),
            fidelity: Some(fidelity),
            attribute_map_rmse: Some(model.map.rmse),
        },
    )?;
    details.insert("explained_rows".into(), rows.len() as f64);
    details.insert("fidelity_accuracy".into(), fidelity.accuracy);
    Ok(details)
}

fn policy(dir: &Path) -> Result<Details> {
    let meta: TableMeta = io::read_json(&dir.join(TABLE))?;
    let (seg, row_ids) = load_segmentation(dir)?;
    let report: RiskReport = io::read_json(&dir.join(RISK_REPORT))?;
    let mut expl: BTreeMap<usize, (String, String)> = BTreeMap::new();
    for e in read_explanations(&dir.join(EXPLANATIONS))? {
        let entry = expl.entry(e.did).or_default();
        match e.method {
            Method::Lime => entry.0 = e.names_joined(),
            Method::Shap => entry.1 = e.names_joined(),
        }
    }
    let flows: Vec<&FlowMeta> = row_ids
        .iter()
        .map(|&r| {
            meta.sidecar
                .get(r)
                .ok_or_else(|| Error::invalid(format!("row id {r} outside the flow table")))
        })
        .collect::<Result<_>>()?;
    let table = generate_policy(
        &row_ids,
        &flows,
        &seg.labels,
        &report.risk_map(),
        report.tau,
        Some(&expl),
    )?;
    table.write_csv(&dir.join(POLICY))?;
    let mut details = Details::new();
    details.insert("rows".into(), table.rows.len() as f64);
    details.insert("allow".into(), table.allow_count() as f64);
    Ok(details)
}

fn eval(cfg: &PipelineConfig, dir: &Path) -> Result<Details> {
    let meta: TableMeta = io::read_json(&dir.join(TABLE))?;
    let (seg, row_ids) = load_segmentation(dir)?;
    let x = load_space(cfg, dir)?;
    let summary: ExplainSummary = io::read_json(&dir.join(EXPLAIN_SUMMARY))?;
    let truth: Option<Vec<u8>> = row_ids
        .iter()
        .map(|&r| meta.sidecar.get(r).and_then(|m| m.label))
        .collect();
    if truth.is_none() {
        log::info!("labels unavailable; reporting structural metrics only");
    }
    let report = EvalReport::build(
        &cfg.variant(),
        x.view(),
        &seg,
        truth.as_deref(),
        summary.fidelity,
        cfg.eval.silhouette_sample_cap,
        cfg.seed,
    )?;
    io::write_json(&dir.join(EVAL_JSON), &report)?;
    io::write_bytes(&dir.join(EVAL_TXT), report.render_text().as_bytes())?;
    let mut details = Details::new();
    if let Some(s) = report.silhouette {
        details.insert("silhouette".into(), s);
    }
    if let Some(m) = &report.security {
        details.insert("purity".into(), m.purity);
    }
    Ok(details)
}

pub fn read_round_logs(dir: &Path) -> Result<Vec<RoundLog>> {
    io::read_json_lines(&dir.join(ROUND_LOGS))
}
