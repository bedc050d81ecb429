//! Small dense kernels shared by the numeric stages.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Row `i` of a standard-layout matrix as a slice.
#[inline]
pub fn row<'a>(m: &ArrayView2<'a, f64>, i: usize) -> &'a [f64] {
    let cols = m.ncols();
    let data = m
        .to_slice()
        .expect("matrix rows must be contiguous (standard layout)");
    &data[i * cols..(i + 1) * cols]
}

pub fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Orthonormalizes the columns of `m` in place with two passes of modified
/// Gram–Schmidt. Columns that collapse numerically are replaced by random
/// directions and re-orthogonalized so the result always has full column rank.
pub fn orthonormalize_columns<R: Rng>(m: &mut Array2<f64>, rng: &mut R) {
    let (n, k) = m.dim();
    assert!(k <= n, "cannot orthonormalize {k} columns in dimension {n}");
    for j in 0..k {
        let mut attempts = 0;
        loop {
            let original = m.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            for _pass in 0..2 {
                for i in 0..j {
                    let proj = dot(m.column(i), m.column(j));
                    let qi = m.column(i).to_owned();
                    m.column_mut(j).scaled_add(-proj, &qi);
                }
            }
            let norm = m.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-10 * original.max(1e-300) && norm > 1e-300 {
                m.column_mut(j).mapv_inplace(|v| v / norm);
                break;
            }
            attempts += 1;
            assert!(attempts < 16, "failed to complete an orthonormal basis");
            for v in m.column_mut(j).iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
    }
}

/// Eigendecomposition of a small symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.clone();
    // symmetrize against round-off in the caller's assembly
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    (values, vectors)
}

/// Solves `a · x = b` for symmetric positive definite `a` via Cholesky.
pub fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.nrows(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::invalid("matrix is not positive definite"));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    let mut x = b.clone();
    for mut col in x.axis_iter_mut(Axis(1)) {
        // forward: L y = b
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    Ok(x)
}

pub fn column_means(m: &ArrayView2<'_, f64>) -> Array1<f64> {
    let n = m.nrows().max(1) as f64;
    m.sum_axis(Axis(0)) / n
}

/// Population standard deviation per column.
pub fn column_stds(m: &ArrayView2<'_, f64>) -> Array1<f64> {
    let means = column_means(m);
    let n = m.nrows().max(1) as f64;
    let mut var = Array1::<f64>::zeros(m.ncols());
    for r in m.rows() {
        for (j, v) in r.iter().enumerate() {
            let d = v - means[j];
            var[j] += d * d;
        }
    }
    var.mapv(|v| (v / n).sqrt())
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (q / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
