use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

use super::AttributeMap;
use crate::{Error, Result};

/// Pearson correlation between every latent column (rows of the result) and
/// every original feature column; zero where either column is constant.
pub fn latent_feature_correlation(
    latent: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if latent.nrows() != features.nrows() {
        return Err(Error::DimensionMismatch {
            expected: latent.nrows(),
            got: features.nrows(),
        });
    }
    let n = latent.nrows() as f64;
    let centre = |m: ArrayView2<'_, f64>| {
        let mean = m.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let c = &m - &mean;
        let norms: Vec<f64> = c
            .columns()
            .into_iter()
            .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        (c, norms)
    };
    if n == 0.0 {
        return Err(Error::invalid("correlation needs at least one row"));
    }
    let (lc, ln) = centre(latent);
    let (fc, fnorm) = centre(features);
    let mut corr = lc.t().dot(&fc);
    for ((l, j), v) in corr.indexed_iter_mut() {
        let den = ln[l] * fnorm[j];
        *v = if den > 1e-12 {
            (*v / den).clamp(-1.0, 1.0)
        } else {
            0.0
        };
    }
    Ok(corr)
}

/// `|Wᵀ · imp|` for a spectral importance vector.
pub fn latent_importance(emb_importances: &[f64], map: &AttributeMap) -> Vec<f64> {
    (0..map.w.ncols())
        .map(|l| {
            emb_importances
                .iter()
                .enumerate()
                .map(|(i, v)| map.w[[i, l]] * v)
                .sum::<f64>()
                .abs()
        })
        .collect()
}

/// Top-`m` original features by `Σ_l latent_l · |corr_{l,j}|`, ties by index.
pub fn top_original_attributes(
    latent: &[f64],
    corr: &Array2<f64>,
    names: &[String],
    m: usize,
) -> Result<Vec<(String, f64)>> {
    if m > names.len() || corr.ncols() != names.len() {
        return Err(Error::invalid(format!(
            "cannot name {m} of {} attributes",
            names.len()
        )));
    }
    let scores: Vec<f64> = (0..names.len())
        .map(|j| {
            latent
                .iter()
                .enumerate()
                .map(|(l, v)| v * corr[[l, j]].abs())
                .sum()
        })
        .collect();
    Ok(rank_by_magnitude(&scores, m)
        .into_iter()
        .map(|j| (names[j].clone(), scores[j]))
        .collect())
}

/// Indices of the `k` largest `|v|`; magnitudes below 1e-12 count as zero and
/// ties go to the lower index.
pub fn rank_by_magnitude(values: &[f64], k: usize) -> Vec<usize> {
    let mag = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v.abs() };
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| mag(values[b]).total_cmp(&mag(values[a])).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean pairwise Jaccard similarity of the given sets.
pub fn stability_score<T: Ord + Clone>(runs: &[Vec<T>]) -> Result<f64> {
    if runs.len() < 2 {
        return Err(Error::invalid("stability needs at least two runs"));
    }
    let sets: Vec<BTreeSet<T>> = runs.iter().map(|r| r.iter().cloned().collect()).collect();
    if sets.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("stability sets must be non-empty"));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            let inter = sets[a].intersection(&sets[b]).count() as f64;
            let union = sets[a].union(&sets[b]).count() as f64;
            total += inter / union;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn jaccard_examples() {
        let a: Vec<char> = "abcde".chars().collect();
        let b: Vec<char> = "abcdf".chars().collect();
        let c: Vec<char> = "vwxyz".chars().collect();
        assert_eq!(stability_score(&[a.clone(), a.clone()]).unwrap(), 1.0);
        assert_eq!(stability_score(&[a.clone(), c]).unwrap(), 0.0);
        assert!((stability_score(&[a, b]).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert!(stability_score::<u8>(&[vec![1]]).is_err());
    }

    #[test]
    fn one_hot_selects_row() {
        let map = AttributeMap {
            w: array![[1.0, -2.0], [3.0, 0.5]],
            b: array![0.0, 0.0],
            lambda: 1.0,
            rmse: 0.0,
        };
        assert_eq!(latent_importance(&[0.0, 1.0], &map), vec![3.0, 0.5]);
    }

    #[test]
    fn planted_correlation_ranks_first() {
        let n = 50;
        let feats = Array2::from_shape_fn((n, 3), |(i, j)| ((i * (j + 2)) as f64 * 0.7).sin());
        let mut latent = Array2::from_shape_fn((n, 2), |(i, j)| ((i + 5 * j) as f64 * 1.9).cos());
        latent.column_mut(0).assign(&feats.column(1));
        let corr = latent_feature_correlation(latent.view(), feats.view()).unwrap();
        assert!((corr[[0, 1]] - 1.0).abs() < 1e-12);
        let names = vec!["dur".to_string(), "rate".to_string(), "proto_6".to_string()];
        let top = top_original_attributes(&[1.0, 0.0], &corr, &names, 3).unwrap();
        assert_eq!(top[0].0, "rate");
        assert_eq!(top.len(), 3);
    }

    #[test]
    fn ranking_ties_by_index() {
        assert_eq!(
            rank_by_magnitude(&[0.0, -2.0, 2.0, 1e-13], 3),
            vec![1, 2, 0]
        );
    }
}
