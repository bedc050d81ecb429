//! Structural and oracle-label evaluation of a segmentation.
//!
//! Noise rows (`-1`) are excluded from silhouette, Davies–Bouldin and the
//! purity aggregates, and reported as a separate fraction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::segment::{Segmentation, NOISE};
use crate::{linalg, rng};
use crate::{Error, Result};

fn non_noise(labels: &[i64]) -> (Vec<usize>, usize) {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != NOISE).collect();
    let mut ids: Vec<i64> = rows.iter().map(|&i| labels[i]).collect();
    ids.sort_unstable();
    ids.dedup();
    (rows, ids.len())
}

/// Mean silhouette over a seed-fixed sample of at most `sample_cap` non-noise
/// rows, each scored against all non-noise rows. With `sample_cap ≥ n` every
/// row is scored in index order.
pub fn silhouette(
    x: ArrayView2<'_, f64>,
    labels: &[i64],
    sample_cap: usize,
    seed: u64,
) -> Result<f64> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let (rows, n_clusters) = non_noise(labels);
    if n_clusters < 2 {
        return Err(Error::invalid("silhouette needs at least two clusters"));
    }
    let scored: Vec<usize> = if sample_cap >= rows.len() {
        rows.clone()
    } else {
        let mut pick = index::sample(
            &mut rng::stream(seed, rng::tag::SILHOUETTE, 0),
            rows.len(),
            sample_cap,
        )
        .into_vec();
        pick.sort_unstable();
        pick.into_iter().map(|p| rows[p]).collect()
    };
    let x = x.as_standard_layout();
    let xv = x.view();
    let s: Vec<f64> = scored
        .par_iter()
        .map(|&i| {
            let xi = linalg::row(&xv, i);
            let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
            for &j in &rows {
                if j != i {
                    let e = acc.entry(labels[j]).or_insert((0.0, 0));
                    e.0 += linalg::distance(xi, linalg::row(&xv, j));
                    e.1 += 1;
                }
            }
            let own = labels[i];
            let a = match acc.get(&own) {
                Some(&(sum, cnt)) if cnt > 0 => sum / cnt as f64,
                // singleton cluster
                _ => return 0.0,
            };
            let b = acc
                .iter()
                .filter(|(&c, _)| c != own)
                .map(|(_, &(sum, cnt))| sum / cnt as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Davies–Bouldin index over non-noise clusters. Two clusters with the same
/// centroid and positive scatter give `+∞`.
pub fn davies_bouldin(x: ArrayView2<'_, f64>, labels: &[i64]) -> Result<f64> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let (rows, n_clusters) = non_noise(labels);
    if n_clusters < 2 {
        return Err(Error::invalid("Davies–Bouldin needs at least two clusters"));
    }
    let ids: Vec<i64> = {
        let mut v: Vec<i64> = rows.iter().map(|&i| labels[i]).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let pos = |l: i64| ids.binary_search(&l).expect("known cluster");
    let d = x.ncols();
    let mut cent = Array2::<f64>::zeros((ids.len(), d));
    let mut cnt = vec![0usize; ids.len()];
    for &i in &rows {
        let c = pos(labels[i]);
        cent.row_mut(c).zip_mut_with(&x.row(i), |a, &b| *a += b);
        cnt[c] += 1;
    }
    for c in 0..ids.len() {
        cent.row_mut(c).mapv_inplace(|v| v / cnt[c] as f64);
    }
    let mut scatter = vec![0.0; ids.len()];
    for &i in &rows {
        let c = pos(labels[i]);
        scatter[c] += x
            .row(i)
            .iter()
            .zip(cent.row(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    for c in 0..ids.len() {
        scatter[c] /= cnt[c] as f64;
    }
    let k = ids.len();
    let mut total = 0.0;
    for a in 0..k {
        let mut worst: f64 = 0.0;
        for b in 0..k {
            if a == b {
                continue;
            }
            let sep = cent
                .row(a)
                .iter()
                .zip(cent.row(b))
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            let num = scatter[a] + scatter[b];
            let ratio = if sep > 0.0 {
                num / sep
            } else if num > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominant {
    Benign,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPurity {
    pub cluster: i64,
    pub size: usize,
    pub attacks: usize,
    pub dominant: Dominant,
    pub purity: f64,
    /// Attack fraction of a benign-dominated cluster, or benign fraction of an
    /// attack-dominated one.
    pub contamination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityMetrics {
    pub clusters: Vec<ClusterPurity>,
    /// Size-weighted over non-noise clusters.
    pub purity: f64,
    pub purity_cluster_mean: f64,
    /// Size-weighted attack fraction over benign-dominated clusters.
    pub c_attack_to_benign: f64,
    /// Size-weighted benign fraction over attack-dominated clusters.
    pub c_benign_to_attack: f64,
    pub c_attack_to_benign_cluster_mean: f64,
    pub c_benign_to_attack_cluster_mean: f64,
    pub n_noise: usize,
    pub noise_attack_fraction: f64,
}

/// Per-cluster purity and directional contamination against binary truth
/// (1 = attack). Ties in the majority go to benign.
pub fn purity_contamination(labels: &[i64], truth: &[u8]) -> Result<SecurityMetrics> {
    if labels.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: truth.len(),
        });
    }
    let mut acc: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for (&l, &t) in labels.iter().zip(truth) {
        let e = acc.entry(l).or_insert((0, 0));
        e.0 += 1;
        e.1 += usize::from(t == 1);
    }
    let (n_noise, noise_attacks) = acc.remove(&NOISE).unwrap_or((0, 0));
    if acc.is_empty() {
        return Err(Error::invalid("no non-noise clusters to evaluate"));
    }
    let clusters: Vec<ClusterPurity> = acc
        .into_iter()
        .map(|(cluster, (size, attacks))| {
            let benign = size - attacks;
            let dominant = if attacks > benign {
                Dominant::Attack
            } else {
                Dominant::Benign
            };
            let (major, minor) = match dominant {
                Dominant::Attack => (attacks, benign),
                Dominant::Benign => (benign, attacks),
            };
            ClusterPurity {
                cluster,
                size,
                attacks,
                dominant,
                purity: major as f64 / size as f64,
                contamination: minor as f64 / size as f64,
            }
        })
        .collect();
    // (size-weighted, cluster-mean) contamination over clusters with the given majority
    let contamination = |dom: Dominant| {
        let sel: Vec<&ClusterPurity> = clusters.iter().filter(|c| c.dominant == dom).collect();
        if sel.is_empty() {
            return (0.0, 0.0);
        }
        let n: usize = sel.iter().map(|c| c.size).sum();
        let minor: f64 = sel.iter().map(|c| c.contamination * c.size as f64).sum();
        let mean = sel.iter().map(|c| c.contamination).sum::<f64>() / sel.len() as f64;
        (minor / n as f64, mean)
    };
    let total: usize = clusters.iter().map(|c| c.size).sum();
    let majority: f64 = clusters.iter().map(|c| c.purity * c.size as f64).sum();
    let (cab, cab_mean) = contamination(Dominant::Benign);
    let (cba, cba_mean) = contamination(Dominant::Attack);
    Ok(SecurityMetrics {
        purity: majority / total as f64,
        purity_cluster_mean: clusters.iter().map(|c| c.purity).sum::<f64>() / clusters.len() as f64,
        c_attack_to_benign: cab,
        c_benign_to_attack: cba,
        c_attack_to_benign_cluster_mean: cab_mean,
        c_benign_to_attack_cluster_mean: cba_mean,
        n_noise,
        noise_attack_fraction: if n_noise > 0 {
            noise_attacks as f64 / n_noise as f64
        } else {
            0.0
        },
        clusters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub n: usize,
}

/// Accuracy and F1 scores over the union of classes in `truth` and `pred`.
/// A class with no true or predicted members contributes F1 = 0.
pub fn classification_metrics(truth: &[i64], pred: &[i64]) -> Result<ClassificationMetrics> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid(
            "classification metrics need at least one row",
        ));
    }
    let mut per: BTreeMap<i64, (usize, usize, usize)> = BTreeMap::new(); // tp, fp, fn
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            per.entry(t).or_default().0 += 1;
        } else {
            per.entry(p).or_default().1 += 1;
            per.entry(t).or_default().2 += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let den = 2 * tp + fp + fn_;
        if den == 0 {
            0.0
        } else {
            2.0 * tp as f64 / den as f64
        }
    };
    let macro_f1 = per
        .values()
        .map(|&(tp, fp, fn_)| f1(tp, fp, fn_))
        .sum::<f64>()
        / per.len() as f64;
    let (tp, fp, fn_) = per
        .values()
        .fold((0, 0, 0), |a, &(t, p, n)| (a.0 + t, a.1 + p, a.2 + n));
    Ok(ClassificationMetrics {
        accuracy: tp as f64 / truth.len() as f64,
        macro_f1,
        micro_f1: f1(tp, fp, fn_),
        n: truth.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Variant label such as `hdbscan+manifold_hypergraph` or `no-hypergraph`.
    pub variant: String,
    pub n_rows: usize,
    pub n_clusters: usize,
    pub noise_fraction: f64,
    pub size_min: usize,
    pub size_median: f64,
    pub size_max: usize,
    pub silhouette: Option<f64>,
    pub dbi: Option<f64>,
    /// `None` when labels are unavailable.
    pub security: Option<SecurityMetrics>,
    pub fidelity: Option<ClassificationMetrics>,
}

impl EvalReport {
    pub fn build(
        variant: &str,
        x: ArrayView2<'_, f64>,
        seg: &Segmentation,
        truth: Option<&[u8]>,
        fidelity: Option<ClassificationMetrics>,
        sample_cap: usize,
        seed: u64,
    ) -> Result<Self> {
        let summary = seg.summary();
        let structural = |r: Result<f64>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("structural metric unavailable: {e}");
                None
            }
        };
        Ok(Self {
            variant: variant.to_string(),
            n_rows: seg.len(),
            n_clusters: seg.n_clusters,
            noise_fraction: if seg.is_empty() {
                0.0
            } else {
                seg.n_noise() as f64 / seg.len() as f64
            },
            size_min: summary.size_min,
            size_median: summary.size_median,
            size_max: summary.size_max,
            silhouette: structural(silhouette(x, &seg.labels, sample_cap, seed)),
            dbi: structural(davies_bouldin(x, &seg.labels)),
            security: truth
                .map(|t| purity_contamination(&seg.labels, t))
                .transpose()?,
            fidelity,
        })
    }

    /// Plain-text table of the headline numbers.
    pub fn render_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "variant            {}", self.variant);
        let _ = writeln!(s, "rows               {}", self.n_rows);
        let _ = writeln!(s, "clusters           {}", self.n_clusters);
        let _ = writeln!(
            s,
            "sizes min/med/max  {}/{}/{}",
            self.size_min, self.size_median, self.size_max
        );
        let _ = writeln!(s, "noise fraction     {:.4}", self.noise_fraction);
        let _ = writeln!(s, "silhouette         {}", opt(self.silhouette));
        let _ = writeln!(s, "davies-bouldin     {}", opt(self.dbi));
        match &self.security {
            Some(m) => {
                let _ = writeln!(s, "purity (weighted)  {:.4}", m.purity);
                let _ = writeln!(s, "purity (mean)      {:.4}", m.purity_cluster_mean);
                let _ = writeln!(s, "C A->B             {:.4}", m.c_attack_to_benign);
                let _ = writeln!(s, "C B->A             {:.4}", m.c_benign_to_attack);
            }
            None => {
                let _ = writeln!(s, "security metrics   unavailable (no labels)");
            }
        }
        if let Some(f) = &self.fidelity {
            let _ = writeln!(s, "surrogate accuracy {:.4}", f.accuracy);
            let _ = writeln!(s, "surrogate macro-F1 {:.4}", f.macro_f1);
            let _ = writeln!(s, "surrogate micro-F1 {:.4}", f.micro_f1);
        }
        s
    }
}
