//! Surrogate-based explanations of segment membership.
//!
//! A distance-weighted kNN classifier imitates the clusterer on spectral
//! coordinates. LIME and Shapley attributions of its prediction are mapped
//! to latent features through a ridge map, then to the original attributes
//! most correlated with those latent features.

mod attribute;
mod kdtree;
mod lime;
mod project;
mod shap;
mod surrogate;

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::{io, rng};
use crate::{Error, Result};

pub use attribute::{fit_attribute_map, AttributeMap};
pub use lime::lime_explain;
pub use project::{
    latent_feature_correlation, latent_importance, rank_by_magnitude, stability_score,
    top_original_attributes,
};
pub use shap::{shap_exact, shap_sampled, ShapMode, MAX_EXACT_DIM};
pub use surrogate::KnnSurrogate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub enabled: bool,
    pub k_neighbors: usize,
    pub lime_samples: usize,
    pub lime_width_factor: f64,
    pub shap_mode: ShapMode,
    pub shap_background: usize,
    /// Coalitions drawn in sampled mode.
    pub shap_coalitions: usize,
    pub top_attributes: usize,
    pub ridge_lambda: f64,
    /// Fraction of segmented rows held out to measure surrogate fidelity.
    pub holdout_fraction: f64,
    /// Explain only this many policy rows (seed-fixed sample); `None` = all.
    pub sample: Option<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k_neighbors: 25,
            lime_samples: 1000,
            lime_width_factor: 0.75,
            shap_mode: ShapMode::Exact,
            shap_background: 100,
            shap_coalitions: 2048,
            top_attributes: 3,
            ridge_lambda: 1.0,
            holdout_fraction: 0.2,
            sample: None,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::config(format!("explain.{f}"), r.to_string()));
        if self.k_neighbors == 0 {
            return bad("k_neighbors", "must be positive");
        }
        if self.lime_samples < 2 {
            return bad("lime_samples", "must be at least 2");
        }
        if !(self.lime_width_factor > 0.0) {
            return bad("lime_width_factor", "must be positive");
        }
        if self.shap_background == 0 {
            return bad("shap_background", "must be positive");
        }
        if self.top_attributes == 0 {
            return bad("top_attributes", "must be positive");
        }
        if !(self.ridge_lambda > 0.0) {
            return bad("ridge_lambda", "must be positive");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction", "must be in (0, 1)");
        }
        if self.sample == Some(0) {
            return bad("sample", "must be positive when set");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lime,
    Shap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub did: usize,
    pub method: Method,
    pub emb_importances: Vec<f64>,
    pub latent_importances: Vec<f64>,
    pub top_original_attributes: Vec<(String, f64)>,
}

impl Explanation {
    /// Attribute names joined with `;` for the policy table.
    pub fn names_joined(&self) -> String {
        self.top_original_attributes
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Top-`k` spectral dimensions by |importance|.
    pub fn top_dims(&self, k: usize) -> Vec<usize> {
        rank_by_magnitude(&self.emb_importances, k)
    }
}

pub fn write_explanations(path: &Path, items: &[Explanation]) -> Result<()> {
    io::write_json_lines(path, items)
}

pub fn read_explanations(path: &Path) -> Result<Vec<Explanation>> {
    io::read_json_lines(path)
}

/// Seed-fixed split of `0..n` into (fit, holdout) sorted index lists.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::tag::HOLDOUT, 0));
    let n_hold =
        ((n as f64 * fraction).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let mut hold = idx[..n_hold].to_vec();
    let mut fit = idx[n_hold..].to_vec();
    hold.sort_unstable();
    fit.sort_unstable();
    (fit, hold)
}

/// Everything needed to explain one spectral row.
#[derive(Debug, Clone)]
pub struct ExplainModel {
    pub surrogate: KnnSurrogate,
    pub map: AttributeMap,
    /// latent × original feature correlations.
    pub corr: Array2<f64>,
    pub feature_names: Vec<String>,
    pub background: Array2<f64>,
    pub scales: Vec<f64>,
}

impl ExplainModel {
    /// Fits the surrogate on `fit_rows` of the embedding, the ridge map on
    /// all rows, and the latent/feature correlations on all rows.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        x_emb: ArrayView2<'_, f64>,
        z_boot: ArrayView2<'_, f64>,
        features: ArrayView2<'_, f64>,
        feature_names: &[String],
        labels: &[i64],
        fit_rows: &[usize],
        config: &ExplainConfig,
        seed: u64,
    ) -> Result<Self> {
        if features.ncols() != feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_names.len(),
                got: features.ncols(),
            });
        }
        if config.top_attributes > feature_names.len() {
            return Err(Error::invalid(format!(
                "top_attributes = {} exceeds {} features",
                config.top_attributes,
                feature_names.len()
            )));
        }
        let x_fit = x_emb.select(Axis(0), fit_rows);
        let y_fit: Vec<i64> = fit_rows.iter().map(|&i| labels[i]).collect();
        let k = config.k_neighbors.min(fit_rows.len());
        let surrogate = KnnSurrogate::fit(x_fit.view(), &y_fit, k)?;
        let map = fit_attribute_map(x_emb, z_boot, config.ridge_lambda)?;
        let corr = latent_feature_correlation(z_boot, features)?;
        let n_bg = config.shap_background.min(fit_rows.len());
        let mut pick = index::sample(
            &mut rng::stream(seed, rng::tag::EXPLAIN_SAMPLE, 1),
            fit_rows.len(),
            n_bg,
        )
        .into_vec();
        pick.sort_unstable();
        let background = x_fit.select(Axis(0), &pick);
        let scales = surrogate.column_scales();
        Ok(Self {
            surrogate,
            map,
            corr,
            feature_names: feature_names.to_vec(),
            background,
            scales,
        })
    }

    fn class_probability(&self, x: &[f64]) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        let class = self.surrogate.predict_index(x);
        move |z: &[f64]| self.surrogate.predict_proba(z)[class]
    }

    pub fn lime(
        &self,
        x: &[f64],
        config: &ExplainConfig,
        seed: u64,
        stream: u64,
    ) -> Result<Vec<f64>> {
        lime_explain(
            self.class_probability(x),
            x,
            &self.scales,
            config.lime_samples,
            config.lime_width_factor,
            seed,
            stream,
        )
    }

    pub fn shap(
        &self,
        x: &[f64],
        config: &ExplainConfig,
        seed: u64,
        stream: u64,
    ) -> Result<Vec<f64>> {
        let f = self.class_probability(x);
        match config.shap_mode {
            ShapMode::Exact => shap_exact(f, x, self.background.view()),
            ShapMode::Sampled => shap_sampled(
                f,
                x,
                self.background.view(),
                config.shap_coalitions,
                seed,
                stream,
            ),
        }
    }

    pub fn project(
        &self,
        did: usize,
        method: Method,
        emb_importances: Vec<f64>,
        m: usize,
    ) -> Result<Explanation> {
        let latent = latent_importance(&emb_importances, &self.map);
        let top = top_original_attributes(&latent, &self.corr, &self.feature_names, m)?;
        Ok(Explanation {
            did,
            method,
            emb_importances,
            latent_importances: latent,
            top_original_attributes: top,
        })
    }

    /// LIME and SHAP explanations of one row, keyed by `did`.
    pub fn explain(
        &self,
        did: usize,
        x: &[f64],
        config: &ExplainConfig,
        seed: u64,
    ) -> Result<(Explanation, Explanation)> {
        let lime = self.lime(x, config, seed, did as u64)?;
        let shap = self.shap(x, config, seed, did as u64)?;
        Ok((
            self.project(did, Method::Lime, lime, config.top_attributes)?,
            self.project(did, Method::Shap, shap, config.top_attributes)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_is_a_partition() {
        let (fit, hold) = holdout_split(50, 0.2, 3);
        assert_eq!(hold.len(), 10);
        let mut all = [fit, hold].concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation_names_fields() {
        let c = ExplainConfig {
            holdout_fraction: 1.0,
            ..Default::default()
        };
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("explain.holdout_fraction"));
    }

    #[test]
    fn explain_model_end_to_end() {
        let n = 60;
        let x = Array2::from_shape_fn(
            (n, 3),
            |(i, j)| if i < 30 { 0.0 } else { 5.0 } + ((i * 3 + j) as f64 * 0.9).sin() * 0.3,
        );
        let z = Array2::from_shape_fn((n, 2), |(i, j)| x[[i, 0]] * (j as f64 + 1.0) + x[[i, 2]]);
        let feats = Array2::from_shape_fn((n, 4), |(i, j)| {
            z[[i, j % 2]] * if j < 2 { 1.0 } else { 0.1 } + (i as f64 * 0.37 * (j + 1) as f64).cos()
        });
        let names: Vec<String> = ["dur", "rate", "sbytes", "proto_6"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let labels: Vec<i64> = (0..n).map(|i| i64::from(i >= 30)).collect();
        let (fit, _) = holdout_split(n, 0.2, 1);
        let cfg = ExplainConfig {
            k_neighbors: 5,
            shap_background: 20,
            ..Default::default()
        };
        let model = ExplainModel::fit(
            x.view(),
            z.view(),
            feats.view(),
            &names,
            &labels,
            &fit,
            &cfg,
            9,
        )
        .unwrap();
        let (lime, shap) = model
            .explain(7, x.row(40).as_slice().unwrap(), &cfg, 1)
            .unwrap();
        assert_eq!(lime.top_original_attributes.len(), 3);
        assert_eq!(shap.did, 7);
        assert_eq!(lime.names_joined().split(';').count(), 3);
        assert!(shap.emb_importances.iter().all(|v| v.is_finite()));
    }
}
