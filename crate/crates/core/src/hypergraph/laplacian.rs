use super::{CsrMatrix, Hypergraph};
use crate::Result;

/// Normalized hypergraph Laplacian with its vertex degrees `Dv = Σ_{e∋v} w_e`.
#[derive(Debug, Clone)]
pub struct Laplacian {
    pub matrix: CsrMatrix,
    pub vertex_degree: Vec<f64>,
}

impl Laplacian {
    pub fn n(&self) -> usize {
        self.matrix.n_rows
    }
}

/// `L = I − Dv^{-1/2} H W De^{-1} Hᵀ Dv^{-1/2}` with `De = |e|`.
///
/// Entries `(u, v)` and `(v, u)` accumulate the same terms in the same order,
/// so the result is exactly symmetric.
pub fn laplacian(h: &Hypergraph) -> Result<Laplacian> {
    h.validate()?;
    let n = h.n_vertices;
    let mut degree = vec![0.0; n];
    for (e, &w) in h.edges.iter().zip(&h.weights) {
        for &v in e {
            degree[v] += w;
        }
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();

    let nnz: usize = h.edges.iter().map(|e| e.len() * e.len()).sum();
    let mut trip = Vec::with_capacity(nnz + n);
    for (e, &w) in h.edges.iter().zip(&h.weights) {
        let c = w / e.len() as f64;
        for &u in e {
            for &v in e {
                trip.push((u, v, c));
            }
        }
    }
    let mut theta = CsrMatrix::from_triplets(n, n, trip);
    for u in 0..n {
        let (a, b) = (theta.indptr[u], theta.indptr[u + 1]);
        for k in a..b {
            let v = theta.indices[k];
            let scaled = theta.values[k] * (inv_sqrt[u] * inv_sqrt[v]);
            theta.values[k] = if u == v { 1.0 - scaled } else { -scaled };
        }
    }
    Ok(Laplacian {
        matrix: theta,
        vertex_degree: degree,
    })
}
