use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::kdtree::KdTree;
use crate::linalg;
use crate::{Error, Result};

/// Distance-weighted kNN classifier over spectral coordinates.
#[derive(Debug, Clone)]
pub struct KnnSurrogate {
    points: Array2<f64>,
    index: KdTree,
    /// Class index into `classes` per training row.
    targets: Vec<usize>,
    /// Sorted distinct labels (noise `-1` is an ordinary class).
    pub classes: Vec<i64>,
    pub k: usize,
}

impl KnnSurrogate {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[i64], k: usize) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        if k == 0 || k > x.nrows() {
            return Err(Error::invalid(format!(
                "surrogate k = {k} must be in 1..={}",
                x.nrows()
            )));
        }
        let mut classes = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::invalid("surrogate needs at least two classes"));
        }
        let targets = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("known class"))
            .collect();
        Ok(Self {
            points: x.as_standard_layout().to_owned(),
            index: KdTree::build(x),
            targets,
            classes,
            k,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.points.nrows()
    }

    /// Class probabilities, ordered as [`Self::classes`].
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let d = self.index.nearest(x, self.k);
        let mut p = vec![0.0; self.classes.len()];
        if d[0].0 == 0.0 {
            p[self.targets[d[0].1]] = 1.0;
            return p;
        }
        for &(d2, i) in &d {
            p[self.targets[i]] += 1.0 / d2.sqrt();
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    /// Most probable class index (lowest on ties).
    pub fn predict_index(&self, x: &[f64]) -> usize {
        let p = self.predict_proba(x);
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, x: &[f64]) -> i64 {
        self.classes[self.predict_index(x)]
    }

    pub fn predict_all(&self, x: ArrayView2<'_, f64>) -> Vec<i64> {
        let x = x.as_standard_layout();
        let xv = x.view();
        (0..xv.nrows())
            .into_par_iter()
            .map(|i| self.predict(linalg::row(&xv, i)))
            .collect()
    }

    /// Population standard deviation of each training column.
    pub fn column_scales(&self) -> Vec<f64> {
        linalg::column_stds(&self.points.view()).to_vec()
    }
}
