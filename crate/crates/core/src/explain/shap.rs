use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{linalg, rng};
use crate::{Error, Result};

pub const MAX_EXACT_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    #[default]
    Exact,
    Sampled,
}

/// Coalition value: mean of `f` with features outside `mask` taken from each
/// background row.
fn coalition_value<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    bg: &ArrayView2<'_, f64>,
    mask: u64,
    buf: &mut Vec<f64>,
) -> f64 {
    let d = x.len();
    let mut total = 0.0;
    for b in 0..bg.nrows() {
        buf.clear();
        buf.extend((0..d).map(|i| if mask >> i & 1 == 1 { x[i] } else { bg[[b, i]] }));
        total += f(buf);
    }
    total / bg.nrows() as f64
}

fn check(x: &[f64], bg: &ArrayView2<'_, f64>) -> Result<()> {
    if bg.nrows() == 0 {
        return Err(Error::invalid("SHAP background is empty"));
    }
    if bg.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: bg.ncols(),
        });
    }
    Ok(())
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn shap_exact<F>(f: F, x: &[f64], background: ArrayView2<'_, f64>) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check(x, &background)?;
    let d = x.len();
    if d > MAX_EXACT_DIM {
        return Err(Error::invalid(format!(
            "exact SHAP supports at most {MAX_EXACT_DIM} features, got {d}"
        )));
    }
    let v: Vec<f64> = (0..1u64 << d)
        .into_par_iter()
        .map_init(Vec::new, |buf, mask| {
            coalition_value(&f, x, &background, mask, buf)
        })
        .collect();
    // w[s] = s!(d−s−1)!/d!
    let w: Vec<f64> = (0..d)
        .map(|s| {
            let mut r = 1.0 / d as f64;
            for j in 1..=s {
                r *= j as f64 / (d - j) as f64;
            }
            r
        })
        .collect();
    Ok((0..d)
        .map(|i| {
            let bit = 1u64 << i;
            (0..1u64 << d)
                .filter(|m| m & bit == 0)
                .map(|m| w[m.count_ones() as usize] * (v[(m | bit) as usize] - v[m as usize]))
                .sum()
        })
        .collect())
}

/// Kernel SHAP: weighted least squares over sampled coalitions with the
/// efficiency constraint imposed exactly.
pub fn shap_sampled<F>(
    f: F,
    x: &[f64],
    background: ArrayView2<'_, f64>,
    n_coalitions: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check(x, &background)?;
    let d = x.len();
    let full = if d >= 64 {
        return Err(Error::invalid("too many features for SHAP"));
    } else {
        (1u64 << d) - 1
    };
    let mut buf = Vec::new();
    let v0 = coalition_value(&f, x, &background, 0, &mut buf);
    let delta = coalition_value(&f, x, &background, full, &mut buf) - v0;
    if d == 1 {
        return Ok(vec![delta]);
    }

    // coalition sizes drawn with probability ∝ (d−1)/(s(d−s)); uniform members
    let mut rng = rng::stream(seed, rng::tag::SHAP, stream);
    let size_w: Vec<f64> = (1..d)
        .map(|s| (d - 1) as f64 / (s * (d - s)) as f64)
        .collect();
    let total_w: f64 = size_w.iter().sum();
    let masks: Vec<u64> = (0..n_coalitions.max(d))
        .map(|_| {
            let mut u = rng.random::<f64>() * total_w;
            let mut s = d - 1;
            for (k, &w) in size_w.iter().enumerate() {
                if u < w {
                    s = k + 1;
                    break;
                }
                u -= w;
            }
            index::sample(&mut rng, d, s)
                .iter()
                .fold(0u64, |m, i| m | 1 << i)
        })
        .collect();
    let values: Vec<f64> = masks
        .par_iter()
        .map_init(Vec::new, |buf, &m| {
            coalition_value(&f, x, &background, m, buf)
        })
        .collect();

    // eliminate φ_{d−1} = Δ − Σ_{i<d−1} φ_i
    let m = d - 1;
    let mut a = Array2::<f64>::zeros((m, m));
    let mut rhs = Array2::<f64>::zeros((m, 1));
    for (&mask, &val) in masks.iter().zip(&values) {
        let zl = (mask >> m & 1) as f64;
        let y = val - v0 - zl * delta;
        let row: Vec<f64> = (0..m).map(|i| (mask >> i & 1) as f64 - zl).collect();
        for p in 0..m {
            rhs[[p, 0]] += row[p] * y;
            for q in 0..m {
                a[[p, q]] += row[p] * row[q];
            }
        }
    }
    for p in 0..m {
        a[[p, p]] += 1e-10;
    }
    let sol = linalg::cholesky_solve(&a, &rhs)?;
    let mut phi: Vec<f64> = (0..m).map(|i| sol[[i, 0]]).collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(phi)
}
