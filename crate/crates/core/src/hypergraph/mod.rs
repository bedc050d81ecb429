//! Latent-space hypergraphs and their spectral embedding.
//!
//! Hyperedges come from kNN neighbourhoods or from t-step diffusion over a
//! self-tuning heat-kernel affinity, optionally built per client shard and
//! unioned. The normalized hypergraph Laplacian
//! `L = I − Dv^{-1/2} H W De^{-1} Hᵀ Dv^{-1/2}` feeds a Chebyshev-filtered
//! block orthogonal iteration that returns the smallest non-trivial
//! eigenvectors.

mod eigen;
mod knn;
mod laplacian;
mod manifold;
mod sparse;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io;
use crate::{Error, Result};

pub use eigen::{spectral_embed, EigenOptions, SpectralEmbedding};
pub use knn::{knn_hyperedges, nearest_neighbors};
pub use laplacian::{laplacian, Laplacian};
pub use manifold::{diffusion_operator, diffusion_row, manifold_hyperedges};
pub use sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperedgeMode {
    KnnOnly,
    ManifoldHypergraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    pub n_vertices: usize,
    /// Sorted vertex ids per hyperedge.
    pub edges: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub mode: HyperedgeMode,
}

#[derive(Serialize, Deserialize)]
struct EdgeLine {
    vertices: Vec<usize>,
    weight: f64,
}

impl Hypergraph {
    /// Collapses identical vertex sets, summing their weights. Output edges
    /// are in lexicographic order of their sorted vertex lists.
    pub(crate) fn from_weighted_sets(
        n_vertices: usize,
        sets: impl IntoIterator<Item = (Vec<usize>, f64)>,
        mode: HyperedgeMode,
    ) -> Self {
        let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (mut set, w) in sets {
            set.sort_unstable();
            set.dedup();
            *merged.entry(set).or_insert(0.0) += w;
        }
        let (edges, weights) = merged.into_iter().unzip();
        Self {
            n_vertices,
            edges,
            weights,
            mode,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.weights.len() {
            return Err(Error::InvalidHypergraph(
                "edge/weight count mismatch".into(),
            ));
        }
        let mut covered = vec![false; self.n_vertices];
        for (e, (edge, &w)) in self.edges.iter().zip(&self.weights).enumerate() {
            if edge.len() < 2 {
                return Err(Error::InvalidHypergraph(format!(
                    "hyperedge {e} has fewer than 2 vertices"
                )));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidHypergraph(format!(
                    "hyperedge {e} has weight {w}"
                )));
            }
            for &v in edge {
                if v >= self.n_vertices {
                    return Err(Error::InvalidHypergraph(format!("vertex {v} out of range")));
                }
                covered[v] = true;
            }
        }
        if let Some(v) = covered.iter().position(|c| !c) {
            return Err(Error::ZeroDegree(v));
        }
        Ok(())
    }

    /// Number of connected components (vertices joined by shared hyperedges).
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_vertices).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for edge in &self.edges {
            let root = find(&mut parent, edge[0]);
            for &v in &edge[1..] {
                let r = find(&mut parent, v);
                parent[r] = root;
            }
        }
        (0..self.n_vertices)
            .filter(|&v| find(&mut parent, v) == v)
            .count()
    }

    /// One JSON object per line: `{"vertices": [...], "weight": w}`.
    pub fn write_json_lines(&self, path: &Path) -> Result<()> {
        io::write_json_lines(
            path,
            self.edges
                .iter()
                .zip(&self.weights)
                .map(|(e, &w)| EdgeLine {
                    vertices: e.clone(),
                    weight: w,
                }),
        )
    }

    pub fn read_json_lines(path: &Path, n_vertices: usize, mode: HyperedgeMode) -> Result<Self> {
        let lines: Vec<EdgeLine> = io::read_json_lines(path)?;
        let h = Self {
            n_vertices,
            edges: lines.iter().map(|l| l.vertices.clone()).collect(),
            weights: lines.iter().map(|l| l.weight).collect(),
            mode,
        };
        h.validate()?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_merge_with_weight_accumulation() {
        let h = Hypergraph::from_weighted_sets(
            3,
            vec![(vec![1, 0], 1.0), (vec![0, 1], 1.0), (vec![2, 1], 0.5)],
            HyperedgeMode::KnnOnly,
        );
        assert_eq!(h.edges, vec![vec![0, 1], vec![1, 2]]);
        assert_eq!(h.weights, vec![2.0, 0.5]);
        h.validate().unwrap();
        assert_eq!(h.connected_components(), 1);
    }

    #[test]
    fn invariants_are_checked() {
        let single = Hypergraph {
            n_vertices: 2,
            edges: vec![vec![0]],
            weights: vec![1.0],
            mode: HyperedgeMode::KnnOnly,
        };
        assert!(single.validate().is_err());
        let uncovered = Hypergraph {
            n_vertices: 3,
            edges: vec![vec![0, 1]],
            weights: vec![1.0],
            mode: HyperedgeMode::KnnOnly,
        };
        assert!(matches!(uncovered.validate(), Err(Error::ZeroDegree(2))));
        let bad_weight = Hypergraph {
            n_vertices: 2,
            edges: vec![vec![0, 1]],
            weights: vec![0.0],
            mode: HyperedgeMode::KnnOnly,
        };
        assert!(bad_weight.validate().is_err());
    }

    #[test]
    fn json_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.jsonl");
        let h = Hypergraph::from_weighted_sets(
            4,
            vec![(vec![0, 1, 2], 1.0), (vec![2, 3], 2.5)],
            HyperedgeMode::ManifoldHypergraph,
        );
        h.write_json_lines(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"vertices":[0,1,2],"weight":1.0}"#
        );
        assert_eq!(
            Hypergraph::read_json_lines(&path, 4, HyperedgeMode::ManifoldHypergraph).unwrap(),
            h
        );
    }
}
