mod common;

use common::{dense_laplacian, max_principal_angle, random_hypergraph, rng, to_nalgebra};
use microseg::hypergraph::{
    diffusion_operator, diffusion_row, knn_hyperedges, laplacian, manifold_hyperedges,
    spectral_embed, EigenOptions, HyperedgeMode, Hypergraph,
};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))
}

#[test]
fn laplacian_matches_dense_triple_product_and_is_psd() {
    let mut r = rng(11);
    for inst in 0..25 {
        let n = r.random_range(5..=120);
        let h = random_hypergraph(n, r.random_range(n / 2..=2 * n), 7, &mut r);
        let lap = laplacian(&h).unwrap();
        let dense = dense_laplacian(&h);
        let ours = to_nalgebra(&lap.matrix.to_dense());
        let err = (&ours - &dense).abs().max();
        assert!(err <= 1e-12, "instance {inst}: max deviation {err:e}");
        for _ in 0..100 {
            let v = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
            let q = v.dot(&(&ours * &v));
            assert!(
                q >= -1e-12 * v.norm_squared(),
                "instance {inst}: vᵀLv = {q:e}"
            );
        }
    }
}

#[test]
fn eigensolver_matches_dense_decomposition() {
    let mut r = rng(5);
    let d_emb = 4;
    for inst in 0..25 {
        let n = r.random_range(20..=200);
        let h = random_hypergraph(n, n, 6, &mut r);
        let lap = laplacian(&h).unwrap();
        let opts = EigenOptions {
            d_emb,
            tol: 1e-10,
            max_iter: 5000,
            seed: inst,
            ..EigenOptions::default()
        };
        let emb = spectral_embed(&lap, &opts).unwrap();
        let eig = to_nalgebra(&lap.matrix.to_dense()).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        for (k, &ev) in emb.eigenvalues.iter().enumerate() {
            let want = eig.eigenvalues[order[k + 1]];
            assert!(
                (ev - want).abs() <= 1e-8,
                "instance {inst}: λ{} = {ev} vs {want}",
                k + 1
            );
        }
        let reference = DMatrix::from_fn(n, d_emb, |i, j| eig.eigenvectors[(i, order[j + 1])]);
        let angle = max_principal_angle(&to_nalgebra(&emb.coords), &reference);
        assert!(angle <= 1e-5, "instance {inst}: principal angle {angle:e}");
    }
}

#[test]
fn single_hyperedge_on_three_vertices_has_spectrum_zero_one_one() {
    let h = Hypergraph {
        n_vertices: 3,
        edges: vec![vec![0, 1, 2]],
        weights: vec![1.0],
        mode: HyperedgeMode::KnnOnly,
    };
    let lap = laplacian(&h).unwrap();
    let emb = spectral_embed(
        &lap,
        &EigenOptions {
            d_emb: 2,
            ..EigenOptions::default()
        },
    )
    .unwrap();
    // exact up to a few units in the last place
    let ulp = 4.0 * f64::EPSILON;
    assert!(
        emb.trivial_eigenvalue.abs() <= ulp,
        "{:e}",
        emb.trivial_eigenvalue
    );
    assert!(
        emb.eigenvalues.iter().all(|v| (v - 1.0).abs() <= ulp),
        "{:?}",
        emb.eigenvalues
    );
}

#[test]
fn diffusion_row_matches_dense_matrix_power() {
    let z = random_points(40, 3, 9);
    let members: Vec<usize> = (0..40).collect();
    let p = diffusion_operator(z.view(), &members, 6);
    let dense = to_nalgebra(&p.to_dense());
    for t in 1..=4 {
        let pt = (0..t - 1).fold(dense.clone(), |acc, _| &acc * &dense);
        for i in [0, 7, 39] {
            let mut row = vec![0.0; 40];
            for (j, v) in diffusion_row(&p, i, t) {
                row[j] = v;
            }
            for j in 0..40 {
                assert!((row[j] - pt[(i, j)]).abs() <= 1e-12, "t={t} ({i},{j})");
            }
        }
    }
}

#[test]
fn manifold_edges_prefer_the_same_tight_group() {
    // two tight groups of 6 far apart; k = 5 must keep each group intact
    let mut pts = Vec::new();
    for g in 0..2 {
        for i in 0..6 {
            pts.push([g as f64 * 50.0 + 0.01 * i as f64, 0.02 * (i % 2) as f64]);
        }
    }
    let z = Array2::from_shape_fn((12, 2), |(i, j)| pts[i][j]);
    let h = manifold_hyperedges(z.view(), 5, 3, None).unwrap();
    for e in &h.edges {
        assert!(
            e.iter().all(|&v| v / 6 == e[0] / 6),
            "edge {e:?} crosses groups"
        );
    }
    assert_eq!(h.connected_components(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_invariants(seed in 0u64..10_000, n in 3usize..60) {
        let mut r = rng(seed);
        let h = random_hypergraph(n, n, 5, &mut r);
        let lap = laplacian(&h).unwrap();
        prop_assert!(lap.matrix.is_symmetric(0.0));
        let dense = lap.matrix.to_dense();
        for i in 0..n {
            prop_assert!(dense[[i, i]] <= 1.0 + 1e-15);
        }
        // Dv^{1/2}·1 spans the kernel of a connected hypergraph's Laplacian
        let root: Vec<f64> = lap.vertex_degree.iter().map(|d| d.sqrt()).collect();
        let lv = lap.matrix.matvec(&root);
        prop_assert!(lv.iter().all(|v| v.abs() < 1e-12));
        let ev = to_nalgebra(&dense).symmetric_eigen().eigenvalues;
        prop_assert!(ev.iter().all(|&l| (-1e-12..=2.0 + 1e-12).contains(&l)));
    }

    #[test]
    fn knn_edges_cover_every_vertex(seed in 0u64..10_000, n in 6usize..50, k in 1usize..5) {
        let z = random_points(n, 3, seed);
        let h = knn_hyperedges(z.view(), k, None).unwrap();
        prop_assert!(h.validate().is_ok());
        prop_assert!(h.edges.iter().all(|e| e.len() <= k + 1 && e.windows(2).all(|w| w[0] < w[1])));
        let total: f64 = h.weights.iter().sum();
        prop_assert!((total - n as f64).abs() < 1e-9);
    }

    #[test]
    fn manifold_edges_are_valid(seed in 0u64..10_000, n in 8usize..40, t in 1usize..4) {
        let z = random_points(n, 2, seed);
        let h = manifold_hyperedges(z.view(), 4, t, None).unwrap();
        prop_assert!(h.validate().is_ok());
        prop_assert!(h.edges.iter().all(|e| e.len() >= 2 && e.len() <= 5));
        prop_assert!(h.weights.iter().all(|w| *w > 0.0 && *w <= n as f64));
    }

    #[test]
    fn diffusion_rows_are_stochastic(seed in 0u64..10_000, t in 1usize..5) {
        let z = random_points(30, 2, seed);
        let members: Vec<usize> = (0..30).collect();
        let p = diffusion_operator(z.view(), &members, 5);
        for i in 0..30 {
            let s: f64 = diffusion_row(&p, i, t).iter().map(|(_, v)| v).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
