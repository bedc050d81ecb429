use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{FlowMeta, RawFlowTable};
use crate::{Error, Result};

/// Upper bound on distinct training values for a one-hot encoded column.
pub const MAX_CATEGORIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericScale {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Zero variance on the training rows; the column standardizes to 0.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalerState {
    pub columns: Vec<NumericScale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryVocab {
    pub name: String,
    /// Sorted; the one-hot block follows this order.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EncoderState {
    pub columns: Vec<CategoryVocab>,
}

/// Standardized numerics followed by one-hot blocks, with the raw-attribute
/// sidecar and the fitted transform state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    pub sidecar: Vec<FlowMeta>,
    pub scaler: ScalerState,
    pub encoder: EncoderState,
    /// Categorical cells not present in the training vocabulary.
    pub unseen_categories: usize,
}

impl ScalerState {
    pub fn fit(names: &[String], numeric: &Array2<f64>, rows: &[usize]) -> Self {
        let n = rows.len() as f64;
        let columns = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mean = rows.iter().map(|&r| numeric[[r, j]]).sum::<f64>() / n;
                let var = rows
                    .iter()
                    .map(|&r| {
                        let d = numeric[[r, j]] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                let std = var.sqrt();
                let constant = std <= 1e-12 * mean.abs().max(1.0);
                NumericScale {
                    name: name.clone(),
                    mean,
                    std,
                    constant,
                }
            })
            .collect();
        ScalerState { columns }
    }

    pub fn transform_value(&self, col: usize, v: f64) -> f64 {
        let c = &self.columns[col];
        if c.constant {
            0.0
        } else {
            (v - c.mean) / c.std
        }
    }

    /// Raw value from a standardized one. Constant columns return their mean.
    pub fn inverse_value(&self, col: usize, z: f64) -> f64 {
        let c = &self.columns[col];
        if c.constant {
            c.mean
        } else {
            z * c.std + c.mean
        }
    }
}

impl EncoderState {
    pub fn fit(names: &[String], cells: &[Vec<String>], rows: &[usize]) -> Result<Self> {
        let columns = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let vocab: BTreeSet<&str> = rows.iter().map(|&r| cells[r][j].as_str()).collect();
                if vocab.len() > MAX_CATEGORIES {
                    return Err(Error::TooManyCategories {
                        column: name.clone(),
                        count: vocab.len(),
                        limit: MAX_CATEGORIES,
                    });
                }
                Ok(CategoryVocab {
                    name: name.clone(),
                    categories: vocab.into_iter().map(str::to_string).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderState { columns })
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(|c| c.categories.len()).sum()
    }
}

/// Fits the scaler and encoder on `train_idx` only, then transforms every row.
///
/// Categories unseen in training encode as an all-zero block and are counted
/// in [`FlowTable::unseen_categories`].
pub fn fit_preprocess(raw: &RawFlowTable, train_idx: &[usize]) -> Result<FlowTable> {
    if train_idx.is_empty() {
        return Err(Error::invalid("train_idx is empty"));
    }
    if let Some(&bad) = train_idx.iter().find(|&&r| r >= raw.len()) {
        return Err(Error::invalid(format!("train index {bad} out of range")));
    }
    let scaler = ScalerState::fit(&raw.numeric_names, &raw.numeric, train_idx);
    let encoder = EncoderState::fit(&raw.categorical_names, &raw.categorical, train_idx)?;

    let n_num = raw.numeric_names.len();
    let d = n_num + encoder.width();
    let mut feature_names: Vec<String> = raw.numeric_names.clone();
    for col in &encoder.columns {
        feature_names.extend(col.categories.iter().map(|c| format!("{}_{}", col.name, c)));
    }

    let mut features = Array2::<f64>::zeros((raw.len(), d));
    let mut unseen = 0usize;
    for i in 0..raw.len() {
        let mut row = features.row_mut(i);
        for j in 0..n_num {
            row[j] = scaler.transform_value(j, raw.numeric[[i, j]]);
        }
        let mut offset = n_num;
        for (j, col) in encoder.columns.iter().enumerate() {
            match col.categories.binary_search(&raw.categorical[i][j]) {
                Ok(k) => row[offset + k] = 1.0,
                Err(_) => unseen += 1,
            }
            offset += col.categories.len();
        }
    }

    Ok(FlowTable {
        features,
        feature_names,
        sidecar: raw.meta.clone(),
        scaler,
        encoder,
        unseen_categories: unseen,
    })
}

impl FlowTable {
    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn has_labels(&self) -> bool {
        !self.sidecar.is_empty() && self.sidecar.iter().all(|m| m.label.is_some())
    }

    pub fn labels(&self) -> Option<Vec<u8>> {
        self.sidecar.iter().map(|m| m.label).collect()
    }

    /// Inverse z-score of numeric column `col` over all rows.
    pub fn inverse_numeric_column(&self, col: usize) -> Array1<f64> {
        self.features
            .column(col)
            .mapv(|z| self.scaler.inverse_value(col, z))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(ndarray::Axis(0), rows)
    }
}
