//! Flow ingestion: CSV loading, cleaning, scaling/encoding, splitting and
//! non-IID client partitioning, plus a synthetic corpus for desk-scale runs.

mod load;
mod partition;
mod preprocess;
mod split;
mod synthetic;

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use load::{load_csv, write_csv};
pub use partition::{dirichlet_partition, protocol_distribution_tv, ClientShard};
pub use preprocess::{
    fit_preprocess, CategoryVocab, EncoderState, FlowTable, NumericScale, ScalerState,
    MAX_CATEGORIES,
};
pub use split::{split, split_80_10_10, SplitIndex};
pub use synthetic::{generate_synthetic, synthetic_schema, SyntheticSpec};

/// Column roles for a flow CSV.
///
/// A column may serve as both a categorical feature and the protocol
/// identifier used for client partitioning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: String,
    pub dst_port: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub protocol: Option<String>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.numeric.is_empty() && self.categorical.is_empty() {
            return Err(Error::config("schema", "no feature columns"));
        }
        let mut seen = BTreeSet::new();
        for name in self.numeric.iter().chain(&self.categorical) {
            if !seen.insert(name.as_str()) {
                return Err(Error::config(
                    "schema",
                    format!("feature column `{name}` listed twice"),
                ));
            }
        }
        let meta = [&self.src_ip, &self.dst_ip, &self.src_port, &self.dst_port];
        for m in meta.into_iter().chain(self.label.as_ref()) {
            if seen.contains(m.as_str()) {
                return Err(Error::config(
                    "schema",
                    format!("meta column `{m}` cannot also be a feature"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-row identifiers kept alongside the feature matrix for policy and
/// explanation back-mapping. Never part of the features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMeta {
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: String,
    pub dst_port: String,
    /// 0 = benign, 1 = attack.
    pub label: Option<u8>,
    pub protocol: Option<String>,
}

/// Parsed and cleaned flow records, prior to scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFlowTable {
    pub numeric_names: Vec<String>,
    /// rows × numeric columns
    pub numeric: Array2<f64>,
    pub categorical_names: Vec<String>,
    /// row-major categorical cells
    pub categorical: Vec<Vec<String>>,
    pub meta: Vec<FlowMeta>,
    pub dropped_rows: usize,
}

impl RawFlowTable {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        !self.meta.is_empty() && self.meta.iter().all(|m| m.label.is_some())
    }

    pub fn attack_count(&self) -> usize {
        self.meta.iter().filter(|m| m.label == Some(1)).count()
    }
}
