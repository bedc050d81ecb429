use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::knn::{check_inputs, nearest_neighbors};
use super::{CsrMatrix, HyperedgeMode, Hypergraph};
use crate::Result;

// keeps σ_i σ_j representable when duplicate points give a zero bandwidth
const MIN_BANDWIDTH: f64 = 1.5e-154;

/// Markov operator `P = D⁻¹ A` over `members` (local indices `0..members.len()`),
/// where `A` is the symmetrized self-tuning heat kernel on kNN pairs.
pub fn diffusion_operator(z: ArrayView2<'_, f64>, members: &[usize], k: usize) -> CsrMatrix {
    let m = members.len();
    let local: BTreeMap<usize, usize> = members.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let nn = nearest_neighbors(z, members, k);
    let rank = k.div_ceil(2).max(1);
    let sigma: Vec<f64> = nn
        .iter()
        .map(|nb| {
            nb.get(rank - 1)
                .or(nb.last())
                .map_or(0.0, |&(_, d)| d)
                .max(MIN_BANDWIDTH)
        })
        .collect();

    let mut trip = Vec::with_capacity(2 * m * k);
    for (i, nb) in nn.iter().enumerate() {
        for &(g, d) in nb {
            let j = local[&g];
            let a = (-(d * d) / (sigma[i] * sigma[j])).exp();
            if a > 0.0 {
                trip.push((i, j, 0.5 * a));
                trip.push((j, i, 0.5 * a));
            }
        }
    }
    let sym = CsrMatrix::from_triplets(m, m, trip.clone());
    for (i, nb) in nn.iter().enumerate() {
        if sym.row_sum(i) <= 0.0 {
            let j = local[&nb[0].0];
            log::warn!(
                "vertex {} has no affinity mass; linking it to its nearest neighbour",
                members[i]
            );
            trip.push((i, j, 1.0));
            trip.push((j, i, 1.0));
        }
    }
    let sym = CsrMatrix::from_triplets(m, m, trip);
    let mut p = sym.clone();
    for i in 0..m {
        let s = sym.row_sum(i);
        for v in &mut p.values[p.indptr[i]..p.indptr[i + 1]] {
            *v /= s;
        }
    }
    p
}

/// Row `i` of `Pᵗ` as sorted `(column, value)` pairs.
pub fn diffusion_row(p: &CsrMatrix, i: usize, t: usize) -> Vec<(usize, f64)> {
    let mut cur: BTreeMap<usize, f64> = BTreeMap::from([(i, 1.0)]);
    for _ in 0..t {
        let mut next = BTreeMap::new();
        for (&j, &vj) in &cur {
            let (cols, vals) = p.row(j);
            for (&c, &pv) in cols.iter().zip(vals) {
                *next.entry(c).or_insert(0.0) += vj * pv;
            }
        }
        cur = next;
    }
    cur.into_iter().collect()
}

/// Top-`k` off-diagonal entries of row `i` of `Pᵗ`, ties by index. When a
/// periodic walk leaves fewer than `k` candidates, the remainder is drawn from
/// `Pᵗ⁻¹, Pᵗ⁻², …` in turn. Returns the targets and the mean selected value.
fn select_targets(p: &CsrMatrix, i: usize, k: usize, t: usize) -> (Vec<usize>, f64) {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    let mut total = 0.0;
    for step in (1..=t).rev() {
        if picked.len() == k {
            break;
        }
        let mut row: Vec<(usize, f64)> = diffusion_row(p, i, step)
            .into_iter()
            .filter(|&(j, v)| j != i && v > 0.0 && !picked.contains(&j))
            .collect();
        row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (j, v) in row.into_iter().take(k - picked.len()) {
            picked.push(j);
            total += v;
        }
    }
    let w = total / picked.len() as f64;
    (picked, w)
}

/// One hyperedge per vertex: itself plus the `k` largest off-diagonal entries
/// of its row of `Pᵗ`, weighted by the mean of those entries.
pub fn manifold_hyperedges(
    z: ArrayView2<'_, f64>,
    k: usize,
    t: usize,
    shards: Option<&[Vec<usize>]>,
) -> Result<Hypergraph> {
    if t == 0 {
        return Err(crate::Error::invalid(
            "diffusion steps t must be at least 1",
        ));
    }
    let groups = check_inputs(z, k, shards)?;
    let mut sets = Vec::with_capacity(z.nrows());
    for members in &groups {
        let p = diffusion_operator(z, members, k);
        let local_sets: Vec<(Vec<usize>, f64)> = (0..members.len())
            .into_par_iter()
            .map(|i| {
                let (picked, w) = select_targets(&p, i, k, t);
                let mut set: Vec<usize> = picked.iter().map(|&j| members[j]).collect();
                set.push(members[i]);
                (set, w)
            })
            .collect();
        sets.extend(local_sets);
    }
    let h = Hypergraph::from_weighted_sets(z.nrows(), sets, HyperedgeMode::ManifoldHypergraph);
    h.validate()?;
    Ok(h)
}
