use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FlowMeta;
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Disjoint train/validation/test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndex {
    /// Validation rows tagged `(benign, attack)` when every row has a label.
    pub fn val_by_label(&self, sidecar: &[FlowMeta]) -> Option<(Vec<usize>, Vec<usize>)> {
        let mut benign = Vec::new();
        let mut attack = Vec::new();
        for &i in &self.val {
            match sidecar[i].label? {
                0 => benign.push(i),
                _ => attack.push(i),
            }
        }
        Some((benign, attack))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffled partition with proportions `(train, val)`; test takes the
/// remainder. Each part is rounded to the nearest row.
pub fn split(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Result<SplitIndex> {
    if n < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::invalid(
            "split fractions must satisfy 0 < train, train + val < 1",
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, tag::SPLIT, 0));
    let n_train = (train_frac * n as f64).round() as usize;
    let n_val = (val_frac * n as f64).round() as usize;
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndex { train, val, test })
}

pub fn split_80_10_10(n: usize, seed: u64) -> Result<SplitIndex> {
    split(n, 0.8, 0.1, seed)
}
