use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::{linalg, rng};
use crate::{Error, Result};

/// Weighted linear fit of `f` on Gaussian perturbations around `x`.
///
/// Perturbation `j` is `x + ε ⊙ scales` with `ε ~ N(0, I)`; its weight is
/// `exp(−‖ε‖² / width²)` with `width = width_factor·√d`. Dimensions with zero
/// scale get importance 0. Returns the slope coefficients.
pub fn lime_explain<F>(
    f: F,
    x: &[f64],
    scales: &[f64],
    n_samples: usize,
    width_factor: f64,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = x.len();
    if scales.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: scales.len(),
        });
    }
    let active: Vec<usize> = (0..d).filter(|&j| scales[j] > 0.0).collect();
    if n_samples <= active.len() {
        return Err(Error::invalid(format!(
            "LIME needs more than {} samples",
            active.len()
        )));
    }
    let mut rng = rng::stream(seed, rng::tag::LIME, stream);
    let eps = Array2::from_shape_simple_fn((n_samples, d), || rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let z: Vec<f64> = (0..d).map(|j| x[j] + eps[[s, j]] * scales[j]).collect();
            f(&z)
        })
        .collect();
    let dist2: Vec<f64> = (0..n_samples)
        .map(|s| eps.row(s).iter().map(|e| e * e).sum())
        .collect();

    let mut width = width_factor * (d as f64).sqrt();
    let mut weights: Vec<f64> = dist2.iter().map(|q| (-q / (width * width)).exp()).collect();
    if weights.iter().sum::<f64>() < 1e-12 {
        width *= 2.0;
        weights = dist2.iter().map(|q| (-q / (width * width)).exp()).collect();
        if weights.iter().sum::<f64>() < 1e-12 {
            return Err(Error::invalid("LIME kernel weights vanish"));
        }
    }

    // design: intercept plus displacement on active dimensions
    let m = active.len() + 1;
    let mut xtwx = Array2::<f64>::zeros((m, m));
    let mut xtwy = Array2::<f64>::zeros((m, 1));
    let mut row = vec![0.0; m];
    for s in 0..n_samples {
        row[0] = 1.0;
        for (a, &j) in active.iter().enumerate() {
            row[a + 1] = eps[[s, j]] * scales[j];
        }
        let w = weights[s];
        for p in 0..m {
            xtwy[[p, 0]] += w * row[p] * y[s];
            for q in 0..m {
                xtwx[[p, q]] += w * row[p] * row[q];
            }
        }
    }
    let beta = linalg::cholesky_solve(&xtwx, &xtwy)?;
    let mut coef = vec![0.0; d];
    for (a, &j) in active.iter().enumerate() {
        coef[j] = beta[[a + 1, 0]];
    }
    Ok(coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_linear_model() {
        let x = [0.3, -0.2, 0.1, 0.0];
        let coef = lime_explain(
            |z: &[f64]| 0.1 + 0.5 * z[1],
            &x,
            &[1.0; 4],
            1000,
            0.75,
            7,
            0,
        )
        .unwrap();
        assert!((coef[1] - 0.5).abs() < 0.05);
        for j in [0, 2, 3] {
            assert!(coef[j].abs() < 1e-9, "{coef:?}");
        }
    }

    #[test]
    fn constant_model_gives_zero() {
        let coef =
            lime_explain(|_: &[f64]| 0.42, &[1.0, 2.0], &[0.5, 2.0], 1000, 0.75, 1, 3).unwrap();
        assert!(coef.iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn zero_scale_dimension_is_inactive() {
        let coef = lime_explain(
            |z: &[f64]| z[0] + z[1],
            &[0.0, 0.0],
            &[1.0, 0.0],
            200,
            0.75,
            1,
            0,
        )
        .unwrap();
        assert_eq!(coef[1], 0.0);
        assert!((coef[0] - 1.0).abs() < 1e-9);
    }
}
