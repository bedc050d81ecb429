mod common;

use common::{davies_bouldin_loops, rng, silhouette_loops};
use microseg::eval::{
    classification_metrics, davies_bouldin, purity_contamination, silhouette, Dominant, EvalReport,
};
use microseg::segment::{Clusterer, Segmentation, NOISE};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn instance(seed: u64, n: usize, k: i64) -> (Array2<f64>, Vec<i64>) {
    let mut r = rng(seed);
    let labels: Vec<i64> = (0..n)
        .map(|i| if i % 11 == 5 { NOISE } else { (i as i64) % k })
        .collect();
    let x = Array2::from_shape_fn((n, 3), |(i, j)| {
        labels[i].max(0) as f64 * 2.0 * (j as f64 - 1.0) + r.random_range(-1.0..1.0)
    });
    (x, labels)
}

#[test]
fn silhouette_and_dbi_match_loop_oracles() {
    for seed in 0..10 {
        let (x, labels) = instance(seed, 40 + 7 * seed as usize, 2 + (seed % 4) as i64);
        let s = silhouette(x.view(), &labels, usize::MAX, 0).unwrap();
        assert!(
            (s - silhouette_loops(x.view(), &labels)).abs() < 1e-12,
            "seed {seed}"
        );
        let d = davies_bouldin(x.view(), &labels).unwrap();
        assert!(
            (d - davies_bouldin_loops(x.view(), &labels)).abs() < 1e-12,
            "seed {seed}"
        );
    }
}

#[test]
fn sampled_silhouette_is_close_and_seeded() {
    let (x, labels) = instance(3, 2000, 4);
    let full = silhouette(x.view(), &labels, usize::MAX, 0).unwrap();
    let a = silhouette(x.view(), &labels, 500, 9).unwrap();
    assert_eq!(a, silhouette(x.view(), &labels, 500, 9).unwrap());
    assert!((a - full).abs() < 0.05, "{a} vs {full}");
}

#[test]
fn purity_and_contamination_by_hand() {
    // cluster 0: 3 benign + 1 attack; cluster 1: 2 attack; noise: 1 attack
    let labels = [0, 0, 0, 0, 1, 1, NOISE];
    let truth = [0, 0, 0, 1, 1, 1, 1];
    let m = purity_contamination(&labels, &truth).unwrap();
    assert!((m.purity - 5.0 / 6.0).abs() < 1e-15);
    assert!((m.c_attack_to_benign - 1.0 / 4.0).abs() < 1e-15);
    assert_eq!(m.c_benign_to_attack, 0.0);
    assert_eq!(m.n_noise, 1);
    assert_eq!(m.noise_attack_fraction, 1.0);
    assert_eq!(m.clusters[0].dominant, Dominant::Benign);
    assert_eq!(m.clusters[1].dominant, Dominant::Attack);
}

#[test]
fn report_without_labels_omits_security_metrics() {
    let (x, labels) = instance(1, 60, 3);
    let out = vec![0.0; labels.len()];
    let seg = Segmentation::new(labels, out, Clusterer::Hdbscan).unwrap();
    let rep = EvalReport::build("v", x.view(), &seg, None, None, 10_000, 0).unwrap();
    assert!(rep.security.is_none());
    assert!(rep.silhouette.is_some());
    assert!(rep.render_text().contains("unavailable"));
}

#[test]
fn macro_and_micro_f1_by_hand() {
    let truth = [0, 0, 1, 1, 2, 2];
    let pred = [0, 1, 1, 1, 2, 0];
    let m = classification_metrics(&truth, &pred).unwrap();
    assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
    assert!((m.micro_f1 - 4.0 / 6.0).abs() < 1e-15);
    // per-class F1: 0.5, 0.8, 2/3
    assert!((m.macro_f1 - (0.5 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_invariant_to_relabel_translation_and_scale(seed in 0u64..10_000, shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let (x, labels) = instance(seed, 60, 3);
        let s = silhouette(x.view(), &labels, usize::MAX, 0).unwrap();
        let d = davies_bouldin(x.view(), &labels).unwrap();
        let relabeled: Vec<i64> = labels.iter().map(|&l| if l == NOISE { l } else { 2 - l }).collect();
        prop_assert!((silhouette(x.view(), &relabeled, usize::MAX, 0).unwrap() - s).abs() < 1e-12);
        prop_assert!((davies_bouldin(x.view(), &relabeled).unwrap() - d).abs() < 1e-12);
        let moved = x.mapv(|v| v * scale + shift);
        prop_assert!((silhouette(moved.view(), &labels, usize::MAX, 0).unwrap() - s).abs() < 1e-9);
        prop_assert!((davies_bouldin(moved.view(), &labels).unwrap() - d).abs() < 1e-9 * d.max(1.0));
    }

    #[test]
    fn purity_and_contamination_sum_to_one(seed in 0u64..10_000, n in 1usize..200) {
        let mut r = rng(seed);
        let labels: Vec<i64> = (0..n).map(|_| r.random_range(-1..5)).collect();
        let truth: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        if labels.iter().all(|&l| l == NOISE) {
            return Ok(());
        }
        let m = purity_contamination(&labels, &truth).unwrap();
        for c in &m.clusters {
            prop_assert!((c.purity + c.contamination - 1.0).abs() < 1e-12);
            prop_assert!(c.purity >= 0.5);
        }
        prop_assert!((0.0..=1.0).contains(&m.purity));
    }
}
