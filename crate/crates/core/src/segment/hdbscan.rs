use std::collections::VecDeque;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Clusterer, Segmentation, NOISE};
use crate::linalg;
use crate::{Error, Result};

// λ = 1/d stays finite for coincident points
const MIN_DISTANCE: f64 = 1e-150;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdbscanConfig {
    /// `None` selects [`auto_min_cluster_size`].
    pub min_cluster_size: Option<usize>,
    /// `None` uses the resolved `min_cluster_size`.
    pub min_samples: Option<usize>,
}

pub fn auto_min_cluster_size(n: usize) -> usize {
    (n / 10_000).max(10)
}

impl HdbscanConfig {
    pub fn resolve(&self, n: usize) -> (usize, usize) {
        let mcs = self
            .min_cluster_size
            .unwrap_or_else(|| auto_min_cluster_size(n));
        (mcs, self.min_samples.unwrap_or(mcs))
    }
}

/// One condensed-tree row: `child` is a point id (`< n`) or a cluster label
/// (`≥ n`, root = `n`) leaving `parent` at density `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondensedRow {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub child_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedTree {
    pub n_points: usize,
    pub rows: Vec<CondensedRow>,
}

impl CondensedTree {
    pub fn n_clusters(&self) -> usize {
        1 + self
            .rows
            .iter()
            .filter(|r| r.child >= self.n_points)
            .count()
    }

    /// Birth λ of every cluster, indexed by `label − n`.
    fn births(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n_clusters()];
        for r in &self.rows {
            if r.child >= self.n_points {
                b[r.child - self.n_points] = r.lambda;
            }
        }
        b
    }

    fn parents(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.n_clusters()];
        for r in &self.rows {
            if r.child >= self.n_points {
                p[r.child - self.n_points] = Some(r.parent - self.n_points);
            }
        }
        p
    }

    /// Excess-of-mass stability per cluster.
    pub fn stabilities(&self) -> Vec<f64> {
        let births = self.births();
        let mut s = vec![0.0; births.len()];
        for r in &self.rows {
            let p = r.parent - self.n_points;
            s[p] += (r.lambda - births[p]) * r.child_size as f64;
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct HdbscanResult {
    pub segmentation: Segmentation,
    pub condensed: CondensedTree,
    pub mst: Vec<(usize, usize, f64)>,
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

/// Distance to the `min_samples`-th nearest point, counting the point itself.
pub fn core_distances(x: ArrayView2<'_, f64>, min_samples: usize) -> Vec<f64> {
    let x = x.as_standard_layout();
    let xv = x.view();
    let n = xv.nrows();
    let k = min_samples.clamp(1, n);
    (0..n)
        .into_par_iter()
        .map(|i| {
            if k == 1 {
                return 0.0;
            }
            let xi = linalg::row(&xv, i);
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| linalg::squared_distance(xi, linalg::row(&xv, j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 2, f64::total_cmp);
            kth.sqrt()
        })
        .collect()
}

/// Prim's algorithm over the dense mutual-reachability graph. Edges are
/// returned in the order they join the tree.
pub fn mutual_reachability_mst(x: ArrayView2<'_, f64>, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let x = x.as_standard_layout();
    let xv = x.view();
    let n = xv.nrows();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    for _ in 1..n {
        in_tree[current] = true;
        let xc = linalg::row(&xv, current);
        let cc = core[current];
        best.par_iter_mut()
            .zip(from.par_iter_mut())
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .for_each(|(j, (b, f))| {
                let mr = linalg::distance(xc, linalg::row(&xv, j))
                    .max(cc)
                    .max(core[j]);
                if mr < *b {
                    *b = mr;
                    *f = current;
                }
            });
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        edges.push((from[next], next, best[next]));
        current = next;
    }
    edges
}

struct Dendrogram {
    n: usize,
    // node n + i merges children[i] at distance[i]
    children: Vec<[usize; 2]>,
    distance: Vec<f64>,
    size: Vec<usize>,
}

impl Dendrogram {
    fn from_mst(n: usize, mst: &[(usize, usize, f64)]) -> Self {
        let mut edges = mst.to_vec();
        edges.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut d = Self {
            n,
            children: Vec::with_capacity(n),
            distance: Vec::with_capacity(n),
            size: Vec::with_capacity(n),
        };
        for (a, b, w) in edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            let node = n + d.children.len();
            parent[ra] = node;
            parent[rb] = node;
            let size = d.node_size(ra) + d.node_size(rb);
            d.children.push([ra, rb]);
            d.distance.push(w);
            d.size.push(size);
        }
        d
    }

    fn node_size(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.size[node - self.n]
        }
    }

    fn root(&self) -> usize {
        self.n + self.children.len() - 1
    }

    /// Children of `node`, looking through internal children merged at the
    /// same distance so that tied merges form one multi-way split.
    fn split(&self, node: usize) -> Vec<usize> {
        let d = self.distance[node - self.n];
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            for &c in self.children[v - self.n].iter().rev() {
                if c >= self.n && self.distance[c - self.n] == d {
                    stack.push(c);
                } else {
                    out.push(c);
                }
            }
        }
        out
    }

    fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < self.n {
                out.push(v);
            } else {
                stack.extend(self.children[v - self.n].iter().rev());
            }
        }
        out
    }
}

fn condense(d: &Dendrogram, min_cluster_size: usize) -> CondensedTree {
    let n = d.n;
    let mut rows = Vec::new();
    let mut next_label = n + 1;
    let mut queue = VecDeque::from([(d.root(), n)]);
    while let Some((node, label)) = queue.pop_front() {
        let lambda = 1.0 / d.distance[node - n].max(MIN_DISTANCE);
        let kids = d.split(node);
        let big = kids
            .iter()
            .filter(|&&c| d.node_size(c) >= min_cluster_size)
            .count();
        for c in kids {
            let size = d.node_size(c);
            if size >= min_cluster_size {
                if big >= 2 {
                    rows.push(CondensedRow {
                        parent: label,
                        child: next_label,
                        lambda,
                        child_size: size,
                    });
                    queue.push_back((c, next_label));
                    next_label += 1;
                } else if c >= n {
                    queue.push_back((c, label));
                } else {
                    rows.push(CondensedRow {
                        parent: label,
                        child: c,
                        lambda,
                        child_size: 1,
                    });
                }
            } else {
                for p in d.leaves(c) {
                    rows.push(CondensedRow {
                        parent: label,
                        child: p,
                        lambda,
                        child_size: 1,
                    });
                }
            }
        }
    }
    CondensedTree { n_points: n, rows }
}

/// Excess-of-mass selection; the root is never selected (see
/// [`single_cluster_labels`] for the no-split case).
fn select_clusters(tree: &CondensedTree) -> Vec<bool> {
    let m = tree.n_clusters();
    let parents = tree.parents();
    let mut stability = tree.stabilities();
    let mut selected = vec![true; m];
    selected[0] = false;
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); m];
    for c in 1..m {
        children[parents[c].expect("non-root cluster has a parent")].push(c);
    }
    for c in (1..m).rev() {
        let sub: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if sub > stability[c] {
            selected[c] = false;
            stability[c] = sub;
        } else {
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(&children[k]);
            }
        }
    }
    selected
}

/// Full HDBSCAN with GLOSH-style outlierness.
pub fn hdbscan(x: ArrayView2<'_, f64>, config: &HdbscanConfig) -> Result<HdbscanResult> {
    let n = x.nrows();
    let (mcs, ms) = config.resolve(n);
    if mcs < 2 || ms == 0 {
        return Err(Error::invalid(
            "min_cluster_size must be ≥ 2 and min_samples ≥ 1",
        ));
    }
    if n < 2 * mcs {
        return Err(Error::invalid(format!(
            "hdbscan needs at least {} rows, got {n}",
            2 * mcs
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("embedding contains non-finite values"));
    }
    let core = core_distances(x, ms);
    let mst = mutual_reachability_mst(x, &core);
    let dendrogram = Dendrogram::from_mst(n, &mst);
    let tree = condense(&dendrogram, mcs);
    let selected = select_clusters(&tree);
    let (labels, outlierness) = if selected.iter().any(|&s| s) {
        label_points(&tree, &selected)
    } else {
        single_cluster_labels(&tree, mcs)
    };
    Ok(HdbscanResult {
        segmentation: Segmentation::new(labels, outlierness, Clusterer::Hdbscan)?,
        condensed: tree,
        mst,
        min_cluster_size: mcs,
        min_samples: ms,
    })
}

/// Largest λ at which any point leaves each cluster's subtree.
fn subtree_max_lambda(tree: &CondensedTree) -> Vec<f64> {
    let n = tree.n_points;
    let parents = tree.parents();
    let mut lm = vec![0.0f64; tree.n_clusters()];
    for r in tree.rows.iter().filter(|r| r.child < n) {
        let p = r.parent - n;
        lm[p] = lm[p].max(r.lambda);
    }
    for c in (1..lm.len()).rev() {
        let p = parents[c].expect("non-root cluster has a parent");
        lm[p] = lm[p].max(lm[c]);
    }
    lm
}

fn glosh(lambda: f64, max_lambda: f64) -> f64 {
    if max_lambda > 0.0 {
        ((max_lambda - lambda) / max_lambda).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn label_points(tree: &CondensedTree, selected: &[bool]) -> (Vec<i64>, Vec<f64>) {
    let n = tree.n_points;
    let parents = tree.parents();
    let mut owner: Vec<Option<usize>> = vec![None; selected.len()];
    let mut ids = vec![NOISE; selected.len()];
    let mut next = 0;
    for c in 0..selected.len() {
        if selected[c] {
            ids[c] = next;
            next += 1;
            owner[c] = Some(c);
        } else if let Some(p) = parents[c] {
            owner[c] = owner[p];
        }
    }
    let lm = subtree_max_lambda(tree);
    let mut labels = vec![NOISE; n];
    let mut out = vec![1.0; n];
    for r in tree.rows.iter().filter(|r| r.child < n) {
        let p = r.parent - n;
        if let Some(o) = owner[p] {
            labels[r.child] = ids[o];
            out[r.child] = glosh(r.lambda, lm[p]);
        }
    }
    (labels, out)
}

/// No split ever produced two clusters of `min_cluster_size`: points that
/// persist to the root's final density form one cluster, the rest are noise.
fn single_cluster_labels(tree: &CondensedTree, mcs: usize) -> (Vec<i64>, Vec<f64>) {
    let n = tree.n_points;
    let top = tree.rows.iter().map(|r| r.lambda).fold(0.0, f64::max);
    let members = tree.rows.iter().filter(|r| r.lambda >= top).count();
    let mut labels = vec![NOISE; n];
    let mut out = vec![1.0; n];
    if members >= mcs {
        for r in &tree.rows {
            if r.lambda >= top {
                labels[r.child] = 0;
                out[r.child] = 0.0;
            }
        }
    }
    (labels, out)
}
