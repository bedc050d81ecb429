use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Clusterer, Segmentation};
use crate::{linalg, rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k_clusters: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop when no centre moves farther than this in one epoch.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k_clusters: 500,
            batch_size: 1024,
            max_epochs: 100,
            tol: 1e-4,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub segmentation: Segmentation,
    pub centroids: Array2<f64>,
    /// Inertia after seeding, then after each epoch.
    pub inertia_history: Vec<f64>,
    pub epochs: usize,
}

/// Index of the nearest centroid (lowest index on ties) and squared distance.
pub fn nearest_centroid(x: &[f64], centroids: &ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = linalg::squared_distance(x, linalg::row(centroids, c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(x: &ArrayView2<'_, f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    let cv = centroids.view();
    (0..x.nrows())
        .into_par_iter()
        .map(|i| nearest_centroid(linalg::row(x, i), &cv))
        .collect()
}

fn kmeans_pp<R: Rng>(
    x: &ArrayView2<'_, f64>,
    sample: &[usize],
    k: usize,
    rng: &mut R,
) -> Array2<f64> {
    let d = x.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = sample[rng.random_range(0..sample.len())];
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = sample
        .iter()
        .map(|&i| linalg::squared_distance(linalg::row(x, i), linalg::row(x, first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&v| v > 0.0).expect("positive mass");
            for (j, &v) in d2.iter().enumerate() {
                if u < v {
                    pick = j;
                    break;
                }
                u -= v;
            }
            pick
        } else {
            // all remaining mass is on existing centres
            c % sample.len()
        };
        let row = linalg::row(x, sample[pick]).to_vec();
        centroids
            .row_mut(c)
            .assign(&ndarray::ArrayView1::from(&row));
        for (j, &i) in sample.iter().enumerate() {
            d2[j] = d2[j].min(linalg::squared_distance(linalg::row(x, i), &row));
        }
    }
    centroids
}

/// MiniBatch KMeans with k-means++ seeding and per-centre streaming means.
pub fn minibatch_kmeans(x: ArrayView2<'_, f64>, config: &KMeansConfig) -> Result<KMeansResult> {
    let n = x.nrows();
    let k = config.k_clusters;
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "k_clusters = {k} must be in 1..={n}"
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let x = x.as_standard_layout();
    let xv = x.view();
    let mut rng = rng::stream(config.seed, rng::tag::KMEANS, 0);
    let sample_size = n.min((10 * k).max(config.batch_size));
    let mut sample = index::sample(&mut rng, n, sample_size).into_vec();
    sample.sort_unstable();
    let mut centroids = kmeans_pp(&xv, &sample, k, &mut rng);
    let mut counts = vec![0u64; k];

    let inertia = |a: &[(usize, f64)]| a.iter().map(|p| p.1).sum::<f64>();
    let mut assignment = assign_all(&xv, &centroids);
    let mut history = vec![inertia(&assignment)];
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = 0;
    for _ in 0..config.max_epochs {
        epochs += 1;
        let before = centroids.clone();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let cv = centroids.view();
            let nearest: Vec<usize> = batch
                .par_iter()
                .map(|&i| nearest_centroid(linalg::row(&xv, i), &cv).0)
                .collect();
            for (&i, &c) in batch.iter().zip(&nearest) {
                counts[c] += 1;
                let eta = 1.0 / counts[c] as f64;
                let xi = xv.row(i);
                centroids
                    .row_mut(c)
                    .zip_mut_with(&xi, |m, &v| *m += eta * (v - *m));
            }
        }
        assignment = assign_all(&xv, &centroids);
        reseed_empty(&xv, &mut centroids, &mut counts, &mut assignment);
        history.push(inertia(&assignment));
        let shift = (0..k)
            .map(|c| {
                linalg::distance(
                    before.row(c).as_slice().unwrap(),
                    centroids.row(c).as_slice().unwrap(),
                )
            })
            .fold(0.0, f64::max);
        if shift < config.tol {
            break;
        }
    }

    // compact away clusters that stayed empty (fewer distinct points than k)
    let mut sizes = vec![0usize; k];
    for &(c, _) in &assignment {
        sizes[c] += 1;
    }
    let mut remap = vec![-1i64; k];
    let mut next = 0;
    for c in 0..k {
        if sizes[c] > 0 {
            remap[c] = next;
            next += 1;
        }
    }
    let keep: Vec<usize> = (0..k).filter(|&c| sizes[c] > 0).collect();
    let centroids = centroids.select(Axis(0), &keep);
    let labels: Vec<i64> = assignment.iter().map(|&(c, _)| remap[c]).collect();
    let outlierness: Vec<f64> = assignment.iter().map(|&(_, d2)| d2.sqrt()).collect();
    Ok(KMeansResult {
        segmentation: Segmentation::new(labels, outlierness, Clusterer::MinibatchKmeans)?,
        centroids,
        inertia_history: history,
        epochs,
    })
}

/// Moves each empty centre onto the point currently farthest from its own
/// centre, one distinct point per empty cluster.
fn reseed_empty(
    x: &ArrayView2<'_, f64>,
    centroids: &mut Array2<f64>,
    counts: &mut [u64],
    assignment: &mut Vec<(usize, f64)>,
) {
    let k = centroids.nrows();
    let mut sizes = vec![0usize; k];
    for &(c, _) in assignment.iter() {
        sizes[c] += 1;
    }
    let empty: Vec<usize> = (0..k).filter(|&c| sizes[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    let mut far: Vec<usize> = (0..x.nrows()).filter(|&i| assignment[i].1 > 0.0).collect();
    far.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
    for (&c, &i) in empty.iter().zip(&far) {
        centroids.row_mut(c).assign(&x.row(i));
        counts[c] = 1;
    }
    *assignment = assign_all(x, centroids);
}

/// Euclidean distance of each row to the mean of its cluster; noise rows get 0.
pub fn kmeans_outlierness(x: ArrayView2<'_, f64>, labels: &[i64]) -> Result<Vec<f64>> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let c = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    let mut sums = Array2::<f64>::zeros((c, x.ncols()));
    let mut counts = vec![0usize; c];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            sums.row_mut(l as usize)
                .zip_mut_with(&x.row(i), |s, &v| *s += v);
            counts[l as usize] += 1;
        }
    }
    for (mut row, &cnt) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        if cnt > 0 {
            row.mapv_inplace(|v| v / cnt as f64);
        }
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l < 0 {
                return 0.0;
            }
            x.row(i)
                .iter()
                .zip(sums.row(l as usize))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}
