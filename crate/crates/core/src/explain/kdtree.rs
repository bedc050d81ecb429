//! Exact k-nearest-neighbour search over a static point set.
//!
//! Results equal a brute-force scan ordered by `(squared distance, index)`,
//! ties included, so swapping one for the other never changes a prediction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};

use crate::linalg;

const LEAF: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        lo: usize,
        hi: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Array2<f64>,
    /// Point indices permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: ArrayView2<'_, f64>) -> Self {
        let mut tree = Self {
            points: points.as_standard_layout().to_owned(),
            order: (0..points.nrows()).collect(),
            nodes: Vec::new(),
        };
        if points.nrows() > 0 {
            tree.split(0, points.nrows());
        }
        tree
    }

    /// Builds the subtree over `order[lo..hi]` and returns its node id.
    fn split(&mut self, lo: usize, hi: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { lo, hi });
        if hi - lo <= LEAF {
            return id;
        }
        let pts = &self.points;
        let spread = |j: usize| {
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[lo..hi] {
                mn = mn.min(pts[[i, j]]);
                mx = mx.max(pts[[i, j]]);
            }
            mx - mn
        };
        let dim = (0..pts.ncols())
            .map(|j| (spread(j), j))
            .fold((-1.0, 0), |a, b| if b.0 > a.0 { b } else { a })
            .1;
        let mid = lo + (hi - lo) / 2;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[[a, dim]].total_cmp(&pts[[b, dim]]).then(a.cmp(&b))
        });
        // left holds coordinates ≤ value, right ≥ value
        let value = pts[[self.order[mid], dim]];
        let left = self.split(lo, mid);
        let right = self.split(mid, hi);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points as `(squared distance, index)`, ascending.
    pub fn nearest(&self, q: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, q, k, &mut heap);
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|Candidate(d, i)| (d, i))
            .collect()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { lo, hi } => {
                let pv = self.points.view();
                for &i in &self.order[lo..hi] {
                    let c = Candidate(linalg::squared_distance(q, linalg::row(&pv, i)), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("full heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, heap);
                // every far point is at least |diff| away along `dim`; equal
                // bounds are still visited so index ties resolve as in a scan
                if heap.len() < k || diff * diff <= heap.peek().expect("full heap").0 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}
