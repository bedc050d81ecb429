//! Reference implementations used as test oracles. Each one is written from
//! the textbook definition, shares no code with the library, and favours
//! clarity over speed.

#![allow(dead_code)]

use std::collections::BTreeSet;

use microseg::hypergraph::{HyperedgeMode, Hypergraph};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Connected random hypergraph: a chain of overlapping edges covers every
/// vertex, then extra random edges of size 2..=max_edge are added.
pub fn random_hypergraph(
    n: usize,
    extra: usize,
    max_edge: usize,
    r: &mut ChaCha8Rng,
) -> Hypergraph {
    let mut sets: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut start = 0;
    while start + 1 < n {
        let len = r.random_range(2..=max_edge.max(2));
        let end = (start + len).min(n);
        sets.insert((start..end).collect());
        start = end - 1;
    }
    for _ in 0..extra {
        let size = r.random_range(2..=max_edge.min(n));
        let mut e: BTreeSet<usize> = BTreeSet::new();
        while e.len() < size {
            e.insert(r.random_range(0..n));
        }
        sets.insert(e.into_iter().collect());
    }
    let edges: Vec<Vec<usize>> = sets.into_iter().collect();
    let weights = edges.iter().map(|_| r.random_range(0.1..2.0)).collect();
    Hypergraph {
        n_vertices: n,
        edges,
        weights,
        mode: HyperedgeMode::KnnOnly,
    }
}

/// `I − Dv^{-1/2} H W De^{-1} Hᵀ Dv^{-1/2}` by explicit dense products.
pub fn dense_laplacian(h: &Hypergraph) -> DMatrix<f64> {
    let n = h.n_vertices;
    let m = h.edges.len();
    let mut inc = DMatrix::<f64>::zeros(n, m);
    for (e, verts) in h.edges.iter().enumerate() {
        for &v in verts {
            inc[(v, e)] = 1.0;
        }
    }
    let w = DMatrix::from_diagonal(&DVector::from_vec(h.weights.clone()));
    let de_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        m,
        h.edges.iter().map(|e| 1.0 / e.len() as f64),
    ));
    let dv = &inc * DVector::from_vec(h.weights.clone());
    let dv_is = DMatrix::from_diagonal(&dv.map(|d| 1.0 / d.sqrt()));
    DMatrix::identity(n, n) - &dv_is * &inc * w * de_inv * inc.transpose() * &dv_is
}

/// Largest principal angle (radians) between the column spaces of two
/// matrices with orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = (a.transpose() * b).singular_values();
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    smin.acos()
}

/// Sorted edge weights of the minimum spanning tree of the complete
/// mutual-reachability graph, by Kruskal with union-find.
pub fn kruskal_mst_weights(x: ArrayView2<'_, f64>, core: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for k in 0..x.ncols() {
                let d = x[[i, k]] - x[[j, k]];
                s += d * d;
            }
            edges.push((s.sqrt().max(core[i]).max(core[j]), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    let mut out = Vec::with_capacity(n - 1);
    for (w, i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            out.push(w);
        }
    }
    out
}

/// Brute-force core distance: distance to the `k`-th nearest point with the
/// point itself counted as the first.
pub fn brute_core_distances(x: ArrayView2<'_, f64>, k: usize) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let mut d: Vec<f64> = (0..x.nrows())
                .map(|j| {
                    let mut s = 0.0;
                    for c in 0..x.ncols() {
                        let t = x[[i, c]] - x[[j, c]];
                        s += t * t;
                    }
                    s.sqrt()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out
}

/// Shapley values from the permutation definition, with the interventional
/// value `v(S) = mean_b f(x_S, b_{S̄})` over background rows.
pub fn shapley_by_permutations(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &Array2<f64>) -> Vec<f64> {
    let d = x.len();
    let value = |s: &[bool]| -> f64 {
        let mut total = 0.0;
        for b in 0..bg.nrows() {
            let z: Vec<f64> = (0..d)
                .map(|i| if s[i] { x[i] } else { bg[[b, i]] })
                .collect();
            total += f(&z);
        }
        total / bg.nrows() as f64
    };
    let perms = permutations(d);
    let mut phi = vec![0.0; d];
    for p in &perms {
        let mut s = vec![false; d];
        let mut prev = value(&s);
        for &i in p {
            s[i] = true;
            let cur = value(&s);
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    phi.iter().map(|v| v / perms.len() as f64).collect()
}

/// Otsu split by exhaustive search: for every cut compute the
/// between-class variance from scratch with bin centres, keep the first
/// maximum. Returns the cut index `k` (bins `< k` are class 0).
pub fn exhaustive_otsu_cut(hist: &[u64]) -> (usize, f64) {
    let bins = hist.len();
    let centre = |b: usize| (b as f64 + 0.5) / bins as f64;
    let total: f64 = hist.iter().map(|&h| h as f64).sum();
    let mut best = (1, -1.0);
    for k in 1..bins {
        let w0: f64 = hist[..k].iter().map(|&h| h as f64).sum();
        let w1 = total - w0;
        let var = if w0 == 0.0 || w1 == 0.0 {
            0.0
        } else {
            let m0 = hist[..k]
                .iter()
                .enumerate()
                .map(|(b, &h)| h as f64 * centre(b))
                .sum::<f64>()
                / w0;
            let m1 = hist[k..]
                .iter()
                .enumerate()
                .map(|(b, &h)| h as f64 * centre(b + k))
                .sum::<f64>()
                / w1;
            (w0 / total) * (w1 / total) * (m0 - m1).powi(2)
        };
        if var > best.1 {
            best = (k, var);
        }
    }
    best
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Plain Lloyd iterations from the given centres until assignments stop
/// changing. Ties go to the lowest centre index.
pub fn lloyd(
    x: ArrayView2<'_, f64>,
    mut centres: Array2<f64>,
    max_iter: usize,
) -> (Vec<usize>, Array2<f64>) {
    let n = x.nrows();
    let k = centres.nrows();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d: f64 = (0..x.ncols())
                    .map(|j| (x[[i, j]] - centres[[c, j]]).powi(2))
                    .sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(centres.raw_dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..x.ncols() {
                sums[[assign[i], j]] += x[[i, j]];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..x.ncols() {
                    centres[[c, j]] = sums[[c, j]] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (assign, centres)
}

/// Silhouette by the double loop over all pairs; noise rows (`-1`) are
/// ignored and singleton clusters score 0.
pub fn silhouette_loops(x: ArrayView2<'_, f64>, labels: &[i64]) -> f64 {
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    let dist = |i: usize, j: usize| -> f64 {
        (0..x.ncols())
            .map(|c| (x[[i, c]] - x[[j, c]]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let clusters: BTreeSet<i64> = idx.iter().map(|&i| labels[i]).collect();
    let mut total = 0.0;
    for &i in &idx {
        let own: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&j| labels[j] == labels[i] && j != i)
            .collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| dist(i, j)).sum::<f64>() / own.len() as f64;
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| {
                let m: Vec<usize> = idx.iter().copied().filter(|&j| labels[j] == c).collect();
                m.iter().map(|&j| dist(i, j)).sum::<f64>() / m.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / idx.len() as f64
}

/// Davies–Bouldin index by direct loops over cluster pairs.
pub fn davies_bouldin_loops(x: ArrayView2<'_, f64>, labels: &[i64]) -> f64 {
    let clusters: Vec<i64> = labels
        .iter()
        .copied()
        .filter(|&l| l >= 0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let d = x.ncols();
    let members =
        |c: i64| -> Vec<usize> { (0..labels.len()).filter(|&i| labels[i] == c).collect() };
    let centroid = |m: &[usize]| -> Vec<f64> {
        (0..d)
            .map(|j| m.iter().map(|&i| x[[i, j]]).sum::<f64>() / m.len() as f64)
            .collect()
    };
    let cents: Vec<Vec<f64>> = clusters.iter().map(|&c| centroid(&members(c))).collect();
    let scatter: Vec<f64> = clusters
        .iter()
        .zip(&cents)
        .map(|(&c, cen)| {
            let m = members(c);
            m.iter()
                .map(|&i| {
                    (0..d)
                        .map(|j| (x[[i, j]] - cen[j]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / m.len() as f64
        })
        .collect();
    let k = clusters.len();
    let mut total = 0.0;
    for a in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for b in 0..k {
            if a != b {
                let sep = (0..d)
                    .map(|j| (cents[a][j] - cents[b][j]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max((scatter[a] + scatter[b]) / sep);
            }
        }
        total += worst;
    }
    total / k as f64
}

/// Gaussian blob of `n` points around `centre` with standard deviation `sd`.
pub fn blob(centre: &[f64], n: usize, sd: f64, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sd).unwrap();
    (0..n)
        .map(|_| centre.iter().map(|c| c + normal.sample(r)).collect())
        .collect()
}

pub fn stack(rows: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}
