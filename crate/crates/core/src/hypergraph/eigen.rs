use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HyperedgeMode, Laplacian};
use crate::io::{self, MatrixShape};
use crate::{linalg, rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenOptions {
    pub d_emb: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Extra block columns beyond the `d_emb + 1` wanted pairs.
    pub oversample: usize,
    /// Degree of the Chebyshev filter applied each sweep; 0 iterates on `I − L`.
    pub chebyshev_degree: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            d_emb: 10,
            tol: 1e-6,
            max_iter: 500,
            oversample: 10,
            chebyshev_degree: 8,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    /// n × d_emb, orthonormal columns.
    pub coords: Array2<f64>,
    /// Ascending retained eigenvalues.
    pub eigenvalues: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub trivial_eigenvalue: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub shape: MatrixShape,
    pub eigenvalues: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub trivial_eigenvalue: f64,
    pub iterations: usize,
    pub mode: HyperedgeMode,
    pub options: EigenOptions,
}

impl SpectralEmbedding {
    pub fn d_emb(&self) -> usize {
        self.coords.ncols()
    }

    /// Writes `<stem>.bin` (row-major little-endian f64) and `<stem>.json`.
    pub fn save(
        &self,
        dir: &Path,
        stem: &str,
        mode: HyperedgeMode,
        options: &EigenOptions,
    ) -> Result<()> {
        let shape = io::write_matrix(&dir.join(format!("{stem}.bin")), &self.coords)?;
        io::write_json(
            &dir.join(format!("{stem}.json")),
            &EmbeddingMeta {
                shape,
                eigenvalues: self.eigenvalues.clone(),
                residual_norms: self.residual_norms.clone(),
                trivial_eigenvalue: self.trivial_eigenvalue,
                iterations: self.iterations,
                mode,
                options: *options,
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(Self, EmbeddingMeta)> {
        let meta: EmbeddingMeta = io::read_json(&dir.join(format!("{stem}.json")))?;
        let coords = io::read_matrix(&dir.join(format!("{stem}.bin")), &meta.shape)?;
        Ok((
            Self {
                coords,
                eigenvalues: meta.eigenvalues.clone(),
                residual_norms: meta.residual_norms.clone(),
                trivial_eigenvalue: meta.trivial_eigenvalue,
                iterations: meta.iterations,
            },
            meta,
        ))
    }
}

fn gershgorin_upper(lap: &Laplacian) -> f64 {
    let m = &lap.matrix;
    (0..m.n_rows)
        .map(|i| {
            let (cols, vals) = m.row(i);
            cols.iter()
                .zip(vals)
                .map(|(&j, &v)| if j == i { v } else { v.abs() })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
        .min(2.0)
}

/// `T_m((L − c)/e) X`, which amplifies components with eigenvalue below
/// `lo` relative to those in `[lo, hi]`.
fn chebyshev_filter(
    lap: &Laplacian,
    x: &Array2<f64>,
    degree: usize,
    lo: f64,
    hi: f64,
) -> Array2<f64> {
    let e = (hi - lo) / 2.0;
    let c = (hi + lo) / 2.0;
    let mut prev = x.clone();
    let mut cur = (lap.matrix.mul_dense(x) - x * c) / e;
    for _ in 1..degree {
        let next = (lap.matrix.mul_dense(&cur) - &cur * c) * (2.0 / e) - &prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Smallest `d_emb + 1` eigenpairs of `L` by block subspace iteration with
/// Rayleigh–Ritz; the smallest (trivial) pair is dropped.
pub fn spectral_embed(lap: &Laplacian, options: &EigenOptions) -> Result<SpectralEmbedding> {
    let n = lap.n();
    let need = options.d_emb + 1;
    if options.d_emb == 0 || need > n {
        return Err(Error::invalid(format!(
            "d_emb + 1 = {need} must be in 2..={n}"
        )));
    }
    if !(options.tol > 0.0) {
        return Err(Error::invalid("eigensolver tolerance must be positive"));
    }
    let b = (need + options.oversample).min(n);
    let mut rng = rng::stream(options.seed, rng::tag::EIGEN, 0);
    let mut x = Array2::from_shape_simple_fn((n, b), || rng.sample::<f64, _>(StandardNormal));
    linalg::orthonormalize_columns(&mut x, &mut rng);
    let hi = gershgorin_upper(lap);

    let mut residuals = vec![f64::INFINITY; need];
    for it in 1..=options.max_iter.max(1) {
        let lx = lap.matrix.mul_dense(&x);
        let mut h = x.t().dot(&lx);
        let ht = h.t().to_owned();
        h = (&h + &ht) * 0.5;
        let (theta, y) = linalg::symmetric_eigen(&h);
        x = x.dot(&y);
        let lx = lx.dot(&y);
        for j in 0..need {
            let r = &lx.column(j) - &(&x.column(j) * theta[j]);
            residuals[j] = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        log::debug!(
            "eigensolver sweep {it}: max residual {:.3e}",
            residuals.iter().cloned().fold(0.0, f64::max)
        );
        if residuals.iter().all(|&r| r <= options.tol) {
            return Ok(finish(x, &theta, residuals, need, it));
        }
        if it == options.max_iter {
            break;
        }
        x = if options.chebyshev_degree == 0 || b == n {
            &x - &lx
        } else {
            let mut lo = theta[b - 1];
            if !(lo > theta[need - 1] && lo < hi) {
                lo = 0.5 * (theta[need - 1] + hi);
            }
            chebyshev_filter(lap, &x, options.chebyshev_degree, lo, hi)
        };
        linalg::orthonormalize_columns(&mut x, &mut rng);
    }
    Err(Error::NoConvergence {
        iterations: options.max_iter,
        max_residual: residuals.iter().cloned().fold(0.0, f64::max),
        residuals,
    })
}

fn finish(
    x: Array2<f64>,
    theta: &[f64],
    residuals: Vec<f64>,
    need: usize,
    iterations: usize,
) -> SpectralEmbedding {
    let mut coords = x.slice(s![.., 1..need]).to_owned();
    for mut col in coords.axis_iter_mut(Axis(1)) {
        // largest-magnitude entry positive, first index on ties
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    if theta[1] <= 1e-8 {
        log::warn!(
            "second Laplacian eigenvalue {:.3e} indicates a disconnected hypergraph",
            theta[1]
        );
    }
    SpectralEmbedding {
        coords,
        eigenvalues: theta[1..need].to_vec(),
        residual_norms: residuals[1..].to_vec(),
        trivial_eigenvalue: theta[0],
        iterations,
    }
}
