//! Operational risk scoring, threshold selection and policy generation.
//!
//! Reconstruction error and structural outlierness are each squashed to
//! `[0, 1]` by a median/IQR sigmoid that is exactly zero at or below the
//! median, blended with equal weights into an instance risk, and averaged
//! per cluster. Clusters at or below the threshold `τ` admit intra-segment
//! traffic; all inter-segment traffic is denied.

mod policy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

pub use policy::{
    decide, generate_policy, Decision, DstCluster, PolicyRow, PolicyTable, POLICY_COLUMNS,
};

pub const CLIP: f64 = 5.0;
pub const IQR_FLOOR: f64 = 1e-9;
pub const OTSU_BINS: usize = 256;
pub const PERCENTILES: [u8; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

/// `max(0, 2(σ(z) − ½))` with `z = clip((v − median)/max(IQR, 1e-9), ±5)`.
pub fn robust_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("risk components must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = linalg::percentile_sorted(&sorted, 50.0);
    let iqr = linalg::percentile_sorted(&sorted, 75.0) - linalg::percentile_sorted(&sorted, 25.0);
    let scale = iqr.max(IQR_FLOOR);
    Ok(values
        .iter()
        .map(|&v| {
            let z = ((v - median) / scale).clamp(-CLIP, CLIP);
            let s = 1.0 / (1.0 + (-z).exp());
            (2.0 * (s - 0.5)).max(0.0)
        })
        .collect())
}

/// `r = w1·Ẽ + w2·Õ`, clamped against rounding to `[0, 1]`.
pub fn instance_risk(e: &[f64], o: &[f64], w1: f64, w2: f64) -> Result<Vec<f64>> {
    if e.len() != o.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            got: o.len(),
        });
    }
    if !(w1 >= 0.0 && w2 >= 0.0 && ((w1 + w2) - 1.0).abs() <= 1e-12) {
        return Err(Error::invalid(format!(
            "risk weights ({w1}, {w2}) must be non-negative and sum to 1"
        )));
    }
    Ok(e.iter()
        .zip(o)
        .map(|(a, b)| (w1 * a + w2 * b).clamp(0.0, 1.0))
        .collect())
}

/// Mean instance risk per cluster; noise (`-1`) is its own pseudo-cluster.
pub fn cluster_risk(r: &[f64], labels: &[i64]) -> Result<BTreeMap<i64, f64>> {
    if r.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: r.len(),
        });
    }
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (&v, &l) in r.iter().zip(labels) {
        let e = acc.entry(l).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(c, (s, n))| (c, s / n as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCandidates {
    /// `(percentile, value)` for p50, p55, …, p95.
    pub percentiles: Vec<(u8, f64)>,
    pub otsu: f64,
    /// Fewer than two distinct values; every candidate equals that value.
    pub degenerate: bool,
}

impl ThresholdCandidates {
    pub fn percentile(&self, p: u8) -> Option<f64> {
        self.percentiles.iter().find(|c| c.0 == p).map(|c| c.1)
    }
}

/// Histogram bin of a value in `[0, 1]`.
pub fn otsu_bin(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Between-class variance `ω₀ω₁(μ₀ − μ₁)²` for each split `k = 1..bins−1`
/// (bins `< k` form class 0), using bin centres.
pub fn otsu_between_variance(hist: &[u64]) -> Vec<f64> {
    let bins = hist.len();
    let total: f64 = hist.iter().map(|&h| h as f64).sum();
    let centre = |b: usize| (b as f64 + 0.5) / bins as f64;
    let mut out = Vec::with_capacity(bins.saturating_sub(1));
    let (mut w0, mut s0) = (0.0, 0.0);
    let s_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &h)| h as f64 * centre(b))
        .sum();
    for k in 1..bins {
        w0 += hist[k - 1] as f64;
        s0 += hist[k - 1] as f64 * centre(k - 1);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            out.push(0.0);
            continue;
        }
        let (m0, m1) = (s0 / w0, (s_all - s0) / w1);
        out.push((w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1));
    }
    out
}

/// Otsu threshold on a histogram as a bin edge in `[0, 1]`. A run of
/// adjacent splits sharing the maximum resolves to its middle; separate
/// maxima resolve to the lowest.
pub fn otsu_threshold(hist: &[u64]) -> f64 {
    let var = otsu_between_variance(hist);
    let best = var.iter().cloned().fold(0.0, f64::max);
    let is_max = |v: f64| v >= best * (1.0 - 1e-12);
    let lo = var.iter().position(|&v| is_max(v)).unwrap_or(0);
    let mut hi = lo;
    while hi + 1 < var.len() && is_max(var[hi + 1]) {
        hi += 1;
    }
    // split index s corresponds to edge (s + 1) / bins
    let mid = (lo + hi) / 2;
    (mid + 1) as f64 / hist.len() as f64
}

pub fn threshold_candidates(values: &[f64]) -> Result<ThresholdCandidates> {
    if values.is_empty() {
        return Err(Error::invalid("no cluster risk values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let degenerate = sorted.first() == sorted.last();
    let percentiles = PERCENTILES
        .iter()
        .map(|&p| (p, linalg::percentile_sorted(&sorted, p as f64)))
        .collect();
    let otsu = if degenerate {
        sorted[0]
    } else {
        let mut hist = vec![0u64; OTSU_BINS];
        for &v in values {
            hist[otsu_bin(v)] += 1;
        }
        otsu_threshold(&hist)
    };
    Ok(ThresholdCandidates {
        percentiles,
        otsu,
        degenerate,
    })
}

/// How `τ` is chosen among the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdPolicy {
    #[default]
    Otsu,
    Percentile(u8),
    Fixed(f64),
}

impl ThresholdPolicy {
    pub fn select(&self, c: &ThresholdCandidates) -> f64 {
        match *self {
            ThresholdPolicy::Otsu => c.otsu,
            ThresholdPolicy::Percentile(p) => c.percentile(p).expect("validated percentile"),
            ThresholdPolicy::Fixed(t) => t,
        }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::config(
                "risk.threshold",
                format!("expected otsu, p50..p95 in steps of 5, or a value in [0, 1]; got {s:?}"),
            )
        };
        let s = s.trim();
        if s.eq_ignore_ascii_case("otsu") {
            return Ok(ThresholdPolicy::Otsu);
        }
        if let Some(p) = s.strip_prefix('p').or_else(|| s.strip_prefix('P')) {
            let p: u8 = p.parse().map_err(|_| bad())?;
            return if PERCENTILES.contains(&p) {
                Ok(ThresholdPolicy::Percentile(p))
            } else {
                Err(bad())
            };
        }
        match s.parse::<f64>() {
            Ok(t) if (0.0..=1.0).contains(&t) => Ok(ThresholdPolicy::Fixed(t)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::Otsu => write!(f, "otsu"),
            ThresholdPolicy::Percentile(p) => write!(f, "p{p}"),
            ThresholdPolicy::Fixed(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for ThresholdPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ThresholdPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRisk {
    pub cluster: i64,
    pub size: usize,
    pub risk: f64,
}

/// Risk stage output. Per-instance vectors are not part of the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub w1: f64,
    pub w2: f64,
    #[serde(skip)]
    pub e_tilde: Vec<f64>,
    #[serde(skip)]
    pub o_tilde: Vec<f64>,
    #[serde(skip)]
    pub r: Vec<f64>,
    pub clusters: Vec<ClusterRisk>,
    pub candidates: ThresholdCandidates,
    pub threshold_policy: ThresholdPolicy,
    pub tau: f64,
}

impl RiskReport {
    /// Scores raw reconstruction errors and outlierness for segmented rows.
    /// Threshold candidates are computed over non-noise clusters only.
    pub fn compute(
        recon_error: &[f64],
        outlierness: &[f64],
        labels: &[i64],
        w1: f64,
        w2: f64,
        policy: ThresholdPolicy,
    ) -> Result<Self> {
        let e_tilde = robust_normalize(recon_error)?;
        let o_tilde = robust_normalize(outlierness)?;
        let r = instance_risk(&e_tilde, &o_tilde, w1, w2)?;
        let by_cluster = cluster_risk(&r, labels)?;
        let mut sizes: BTreeMap<i64, usize> = BTreeMap::new();
        for &l in labels {
            *sizes.entry(l).or_insert(0) += 1;
        }
        let clusters: Vec<ClusterRisk> = by_cluster
            .iter()
            .map(|(&c, &risk)| ClusterRisk {
                cluster: c,
                size: sizes[&c],
                risk,
            })
            .collect();
        let mut scored: Vec<f64> = clusters
            .iter()
            .filter(|c| c.cluster >= 0)
            .map(|c| c.risk)
            .collect();
        if scored.is_empty() {
            scored = clusters.iter().map(|c| c.risk).collect();
        }
        let candidates = threshold_candidates(&scored)?;
        if candidates.degenerate {
            log::warn!("all cluster risks are equal; threshold candidates are degenerate");
        }
        let tau = policy.select(&candidates);
        Ok(Self {
            w1,
            w2,
            e_tilde,
            o_tilde,
            r,
            clusters,
            candidates,
            threshold_policy: policy,
            tau,
        })
    }

    pub fn risk_of(&self, cluster: i64) -> Option<f64> {
        self.clusters
            .iter()
            .find(|c| c.cluster == cluster)
            .map(|c| c.risk)
    }

    pub fn risk_map(&self) -> BTreeMap<i64, f64> {
        self.clusters.iter().map(|c| (c.cluster, c.risk)).collect()
    }

    /// Re-selects `τ` without recomputing scores.
    pub fn with_threshold(mut self, policy: ThresholdPolicy) -> Self {
        self.tau = policy.select(&self.candidates);
        self.threshold_policy = policy;
        self
    }

    /// Fraction of non-noise clusters with `R ≤ τ`.
    pub fn safe_fraction(&self) -> f64 {
        let real: Vec<&ClusterRisk> = self.clusters.iter().filter(|c| c.cluster >= 0).collect();
        if real.is_empty() {
            return 0.0;
        }
        real.iter().filter(|c| c.risk <= self.tau).count() as f64 / real.len() as f64
    }
}
