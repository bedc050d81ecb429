//! Micro-segmentation of the spectral embedding.
//!
//! MiniBatch KMeans gives a fixed number of centroid-based segments with
//! distance-to-centroid outlierness. HDBSCAN builds the mutual-reachability
//! MST, condenses the single-linkage hierarchy and selects clusters by excess
//! of mass; points outside selected clusters are noise (`-1`) with
//! outlierness 1.

mod hdbscan;
mod kmeans;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io;
use crate::linalg;
use crate::{Error, Result};

pub use hdbscan::{
    auto_min_cluster_size, core_distances, hdbscan, mutual_reachability_mst, CondensedRow,
    CondensedTree, HdbscanConfig, HdbscanResult,
};
pub use kmeans::{
    kmeans_outlierness, minibatch_kmeans, nearest_centroid, KMeansConfig, KMeansResult,
};

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clusterer {
    MinibatchKmeans,
    Hdbscan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Cluster id per row, `0..n_clusters` or [`NOISE`].
    pub labels: Vec<i64>,
    pub outlierness: Vec<f64>,
    pub clusterer: Clusterer,
    pub n_clusters: usize,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub clusterer: Clusterer,
    pub n_rows: usize,
    pub n_clusters: usize,
    pub n_noise: usize,
    pub size_min: usize,
    pub size_median: f64,
    pub size_max: usize,
}

impl Segmentation {
    /// Validates labels and derives cluster sizes.
    pub fn new(labels: Vec<i64>, outlierness: Vec<f64>, clusterer: Clusterer) -> Result<Self> {
        if labels.len() != outlierness.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: outlierness.len(),
            });
        }
        let n_clusters = labels
            .iter()
            .copied()
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize);
        let mut sizes = vec![0usize; n_clusters];
        for &l in &labels {
            if l < NOISE {
                return Err(Error::invalid(format!("invalid cluster label {l}")));
            }
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("cluster {c} is empty")));
        }
        if let Some(v) = outlierness.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "outlierness {v} is not a finite non-negative value"
            )));
        }
        Ok(Self {
            labels,
            outlierness,
            clusterer,
            n_clusters,
            sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn summary(&self) -> SegmentationSummary {
        let mut s: Vec<f64> = self.sizes.iter().map(|&v| v as f64).collect();
        s.sort_by(f64::total_cmp);
        SegmentationSummary {
            clusterer: self.clusterer,
            n_rows: self.len(),
            n_clusters: self.n_clusters,
            n_noise: self.n_noise(),
            size_min: self.sizes.iter().copied().min().unwrap_or(0),
            size_median: if s.is_empty() {
                0.0
            } else {
                linalg::percentile_sorted(&s, 50.0)
            },
            size_max: self.sizes.iter().copied().max().unwrap_or(0),
        }
    }

    /// `row_id,cluster_id,outlierness` per row, plus a JSON summary next to it.
    pub fn save(&self, csv_path: &Path, summary_path: &Path, row_ids: &[usize]) -> Result<()> {
        if row_ids.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: row_ids.len(),
            });
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row_id", "cluster_id", "outlierness"])?;
        for ((id, l), o) in row_ids.iter().zip(&self.labels).zip(&self.outlierness) {
            w.write_record([id.to_string(), l.to_string(), o.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        io::write_bytes(csv_path, &bytes)?;
        io::write_json(summary_path, &self.summary())
    }

    /// Returns the segmentation and its row ids.
    pub fn load(csv_path: &Path, summary_path: &Path) -> Result<(Self, Vec<usize>)> {
        let summary: SegmentationSummary = io::read_json(summary_path)?;
        let bytes = io::read_bytes(csv_path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let (mut ids, mut labels, mut out) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let parse_err = || {
                Error::invalid(format!(
                    "malformed segmentation row in {}",
                    csv_path.display()
                ))
            };
            ids.push(
                rec.get(0)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(parse_err)?,
            );
            labels.push(
                rec.get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(parse_err)?,
            );
            out.push(
                rec.get(2)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(parse_err)?,
            );
        }
        Ok((Self::new(labels, out, summary.clusterer)?, ids))
    }
}
