use ndarray::ArrayView2;
use rayon::prelude::*;

use super::{HyperedgeMode, Hypergraph};
use crate::linalg;
use crate::{Error, Result};

/// The `k` nearest members of `members` to each member (self excluded), as
/// `(global index, distance)` sorted by distance then index.
pub fn nearest_neighbors(
    z: ArrayView2<'_, f64>,
    members: &[usize],
    k: usize,
) -> Vec<Vec<(usize, f64)>> {
    let z = z.as_standard_layout();
    let zv = z.view();
    members
        .par_iter()
        .map(|&i| {
            let zi = linalg::row(&zv, i);
            let mut cand: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (linalg::squared_distance(zi, linalg::row(&zv, j)), j))
                .collect();
            let k = k.min(cand.len());
            if k < cand.len() {
                cand.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.truncate(k);
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().map(|(d2, j)| (j, d2.sqrt())).collect()
        })
        .collect()
}

pub(crate) fn check_inputs(
    z: ArrayView2<'_, f64>,
    k: usize,
    shards: Option<&[Vec<usize>]>,
) -> Result<Vec<Vec<usize>>> {
    let n = z.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("latent matrix contains non-finite values"));
    }
    let groups: Vec<Vec<usize>> = match shards {
        None => vec![(0..n).collect()],
        Some(s) => s.to_vec(),
    };
    let mut seen = vec![false; n];
    for g in &groups {
        if g.len() < 2 {
            return Err(Error::invalid("every shard needs at least 2 rows"));
        }
        for &i in g {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!(
                    "shard row {i} out of range or repeated"
                )));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!(
            "row {i} is not covered by any shard"
        )));
    }
    Ok(groups)
}

/// One hyperedge per vertex: itself plus its `k` nearest neighbours within
/// its shard. Weight 1 each, identical sets merged.
pub fn knn_hyperedges(
    z: ArrayView2<'_, f64>,
    k: usize,
    shards: Option<&[Vec<usize>]>,
) -> Result<Hypergraph> {
    let groups = check_inputs(z, k, shards)?;
    let mut sets = Vec::with_capacity(z.nrows());
    for members in &groups {
        let nn = nearest_neighbors(z, members, k);
        for (&i, nbrs) in members.iter().zip(nn) {
            let mut set: Vec<usize> = nbrs.into_iter().map(|(j, _)| j).collect();
            set.push(i);
            sets.push((set, 1.0));
        }
    }
    let h = Hypergraph::from_weighted_sets(z.nrows(), sets, HyperedgeMode::KnnOnly);
    h.validate()?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn collinear_points_merge() {
        let z = array![[0.0], [1.0], [3.0]];
        let h = knn_hyperedges(z.view(), 1, None).unwrap();
        assert_eq!(h.edges, vec![vec![0, 1], vec![1, 2]]);
        assert_eq!(h.weights, vec![2.0, 1.0]);
    }

    #[test]
    fn edge_size_is_k_plus_one() {
        let z = Array2::from_shape_fn((1000, 3), |(i, j)| {
            ((i * 7 + j * 13) as f64 * 0.37).sin() * (i as f64).sqrt()
        });
        let h = knn_hyperedges(z.view(), 12, None).unwrap();
        assert!(h.n_edges() <= 1000);
        assert!(h.edges.iter().all(|e| e.len() == 13));
    }

    #[test]
    fn shards_keep_edges_local() {
        let z = Array2::from_shape_fn((20, 2), |(i, j)| (i * 2 + j) as f64);
        let shards = vec![
            (0..20).step_by(2).collect::<Vec<_>>(),
            (1..20).step_by(2).collect(),
        ];
        let h = knn_hyperedges(z.view(), 3, Some(&shards)).unwrap();
        for e in &h.edges {
            assert!(e.iter().all(|v| v % 2 == e[0] % 2));
        }
        assert_eq!(h.connected_components(), 2);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let z = array![[0.0], [1.0], [3.0]];
        assert!(knn_hyperedges(z.view(), 0, None).is_err());
        assert!(knn_hyperedges(z.view(), 1, Some(&[vec![0, 1]])).is_err());
        let nan = array![[0.0], [f64::NAN]];
        assert!(knn_hyperedges(nan.view(), 1, None).is_err());
    }
}
