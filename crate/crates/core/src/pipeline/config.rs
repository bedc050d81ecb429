use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dnae::TrainConfig;
use crate::explain::ExplainConfig;
use crate::hypergraph::{EigenOptions, HyperedgeMode};
use crate::ingest::{Schema, SyntheticSpec};
use crate::risk::ThresholdPolicy;
use crate::segment::{Clusterer, HdbscanConfig, KMeansConfig};
use crate::{Error, Result};

/// Environment variable that overrides the run seed.
pub const SEED_ENV: &str = "MICROSEG_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Cluster the latent codes directly.
    None,
    KnnOnly,
    ManifoldHypergraph,
}

impl GraphMode {
    pub fn hyperedge_mode(self) -> Option<HyperedgeMode> {
        match self {
            GraphMode::None => None,
            GraphMode::KnnOnly => Some(HyperedgeMode::KnnOnly),
            GraphMode::ManifoldHypergraph => Some(HyperedgeMode::ManifoldHypergraph),
        }
    }
}

/// Which rows are encoded, segmented, scored and turned into policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRows {
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Flow CSV; the synthetic corpus is used when absent.
    pub path: Option<PathBuf>,
    /// Column roles; required with `path`.
    pub schema: Option<Schema>,
    pub synthetic: SyntheticSpec,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub segment_rows: SegmentRows,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            schema: None,
            synthetic: SyntheticSpec::default(),
            train_fraction: 0.8,
            val_fraction: 0.1,
            segment_rows: SegmentRows::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    pub alpha: f64,
    /// One client holding every training row, full participation.
    pub centralized: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            alpha: 0.7,
            centralized: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypergraphConfig {
    pub mode: GraphMode,
    pub k: usize,
    /// Diffusion steps in manifold mode.
    pub t: usize,
    pub eigen: EigenOptions,
}

impl Default for HypergraphConfig {
    fn default() -> Self {
        Self {
            mode: GraphMode::ManifoldHypergraph,
            k: 12,
            t: 3,
            eigen: EigenOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub clusterer: Clusterer,
    pub kmeans: KMeansConfig,
    pub hdbscan: HdbscanConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            clusterer: Clusterer::Hdbscan,
            kmeans: KMeansConfig::default(),
            hdbscan: HdbscanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub w1: f64,
    pub w2: f64,
    pub threshold: ThresholdPolicy,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            threshold: ThresholdPolicy::Otsu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub silhouette_sample_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            silhouette_sample_cap: 10_000,
        }
    }
}

/// Full run configuration. The top-level `seed` is authoritative: `resolved`
/// copies it into every sub-config that carries its own seed field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub federation: FederationConfig,
    pub train: TrainConfig,
    pub hypergraph: HypergraphConfig,
    pub cluster: ClusterConfig,
    pub risk: RiskConfig,
    pub explain: ExplainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("microseg-out"),
            data: DataConfig::default(),
            federation: FederationConfig::default(),
            train: TrainConfig::default(),
            hypergraph: HypergraphConfig::default(),
            cluster: ClusterConfig::default(),
            risk: RiskConfig::default(),
            explain: ExplainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::config("config", e.to_string())
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(toml_error)
    }

    /// File (or defaults), then the seed environment variable, then each
    /// `key=value` override in order.
    pub fn build(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(toml_error)?
            }
            None => toml::Table::new(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            let seed: i64 = seed
                .trim()
                .parse()
                .ok()
                .filter(|s| *s >= 0)
                .ok_or_else(|| {
                    Error::config(SEED_ENV, format!("not a non-negative integer: {seed:?}"))
                })?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_str(), "override must look like key=value"))?;
            set_path(&mut table, key.trim(), parse_literal(raw.trim()))?;
        }
        toml::Value::Table(table).try_into().map_err(toml_error)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(toml_error)
    }

    /// Copy of the config with seeds propagated and the centralized ablation
    /// applied.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c.hypergraph.eigen.seed = c.seed;
        c.cluster.kmeans.seed = c.seed;
        c.data.synthetic.seed = c.seed;
        if c.federation.centralized {
            c.federation.clients = 1;
            c.train.participation = 1.0;
        }
        c
    }

    /// Report label of the ablation variant.
    pub fn variant(&self) -> String {
        let clusterer = match self.cluster.clusterer {
            Clusterer::Hdbscan => "hdbscan",
            Clusterer::MinibatchKmeans => "minibatch_kmeans",
        };
        let graph = match self.hypergraph.mode {
            GraphMode::None => "no-hypergraph",
            GraphMode::KnnOnly => "knn_only",
            GraphMode::ManifoldHypergraph => "manifold_hypergraph",
        };
        let fl = if self.federation.centralized {
            "+no-fl"
        } else {
            ""
        };
        format!("{clusterer}+{graph}{fl}")
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::config(f, r));
        let d = &self.data;
        match (&d.path, &d.schema) {
            (Some(p), Some(schema)) => {
                if !p.is_file() {
                    return bad(
                        "data.path",
                        &format!("{} is not a readable file", p.display()),
                    );
                }
                schema
                    .validate()
                    .map_err(|e| Error::config("data.schema", e.to_string()))?;
            }
            (Some(_), None) => return bad("data.schema", "required when data.path is set"),
            (None, _) => d.synthetic.validate()?,
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return bad("data.train_fraction", "must lie in (0, 1)");
        }
        if !(d.val_fraction >= 0.0 && d.train_fraction + d.val_fraction < 1.0) {
            return bad(
                "data.val_fraction",
                "must be non-negative with train + val < 1",
            );
        }
        let f = &self.federation;
        if !f.centralized && f.clients < 2 {
            return bad(
                "federation.clients",
                "must be at least 2 (set federation.centralized for one client)",
            );
        }
        if !(f.alpha > 0.0 && f.alpha.is_finite()) {
            return bad("federation.alpha", "must be positive");
        }
        self.train.validate()?;
        let h = &self.hypergraph;
        if h.k == 0 {
            return bad("hypergraph.k", "must be positive");
        }
        if h.t == 0 {
            return bad("hypergraph.t", "must be positive");
        }
        if h.eigen.d_emb == 0 {
            return bad("hypergraph.eigen.d_emb", "must be positive");
        }
        if !(h.eigen.tol > 0.0) {
            return bad("hypergraph.eigen.tol", "must be positive");
        }
        if h.eigen.max_iter == 0 {
            return bad("hypergraph.eigen.max_iter", "must be positive");
        }
        let km = &self.cluster.kmeans;
        if km.k_clusters == 0 {
            return bad("cluster.kmeans.k_clusters", "must be positive");
        }
        if km.batch_size == 0 {
            return bad("cluster.kmeans.batch_size", "must be positive");
        }
        if km.max_epochs == 0 {
            return bad("cluster.kmeans.max_epochs", "must be positive");
        }
        if !(km.tol >= 0.0) {
            return bad("cluster.kmeans.tol", "must be non-negative");
        }
        if self.cluster.hdbscan.min_cluster_size.is_some_and(|m| m < 2) {
            return bad("cluster.hdbscan.min_cluster_size", "must be at least 2");
        }
        if self.cluster.hdbscan.min_samples == Some(0) {
            return bad("cluster.hdbscan.min_samples", "must be positive");
        }
        let r = &self.risk;
        if !(r.w1 >= 0.0 && r.w2 >= 0.0) {
            return bad("risk.w1", "risk weights must be non-negative");
        }
        if (r.w1 + r.w2 - 1.0).abs() > 1e-9 {
            return bad("risk.w2", "risk weights must sum to 1");
        }
        self.explain.validate()?;
        if self.eval.silhouette_sample_cap == 0 {
            return bad("eval.silhouette_sample_cap", "must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_set_nested_keys() {
        let c = PipelineConfig::build(
            None,
            &[
                "hypergraph.mode=none".into(),
                "risk.threshold=p85".into(),
                "cluster.kmeans.k_clusters=7".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.hypergraph.mode, GraphMode::None);
        assert_eq!(c.risk.threshold, ThresholdPolicy::Percentile(85));
        assert_eq!(c.cluster.kmeans.k_clusters, 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_named() {
        assert!(PipelineConfig::build(None, &["hypergraph.bogus=1".into()]).is_err());
        let c = PipelineConfig::build(None, &["risk.w1=0.7".into()]).unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("risk.w2"));
        let c = PipelineConfig::build(None, &["federation.clients=1".into()]).unwrap();
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("federation.clients"));
    }

    #[test]
    fn centralized_collapses_clients() {
        let c = PipelineConfig::build(
            None,
            &["federation.centralized=true".into(), "seed=7".into()],
        )
        .unwrap();
        c.validate().unwrap();
        let r = c.resolved();
        assert_eq!((r.federation.clients, r.train.participation), (1, 1.0));
        assert_eq!((r.train.seed, r.cluster.kmeans.seed), (7, 7));
        assert_eq!(r.variant(), "hdbscan+manifold_hypergraph+no-fl");
    }
}
