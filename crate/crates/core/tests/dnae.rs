mod common;

use common::rng;
use microseg::dnae::{
    fedavg_round, local_train, loss_and_gradient, Architecture, ClientData, ClientOptimizer,
    ModelParams, ServerState, TrainConfig,
};
use ndarray::{Array2, Axis};
use rand::Rng;

fn random_net(d: usize, p: usize, seed: u64) -> ModelParams {
    let mut r = rng(seed);
    let arch = Architecture {
        encoder_hidden: vec![r.random_range(p..=8)],
        latent: p,
        decoder_hidden: vec![r.random_range(p..=8)],
    };
    let mut m = ModelParams::glorot(d, &arch, seed).unwrap();
    // non-zero biases so every parameter block is exercised
    for v in &mut m.values {
        *v += r.random_range(-0.2..0.2);
    }
    m
}

fn random_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0))
}

#[test]
fn backprop_matches_central_differences() {
    let mut worst = 0.0f64;
    for trial in 0..8u64 {
        let mut r = rng(100 + trial);
        let d = r.random_range(2..=8);
        let p = r.random_range(1..=4.min(d));
        let net = random_net(d, p, trial);
        let batch = random_rows(7, d, 200 + trial);
        let (_, grad) = loss_and_gradient(&net, batch.view()).unwrap();
        let h = 1e-6;
        for k in 0..net.len() {
            let mut plus = net.clone();
            plus.values[k] += h;
            let mut minus = net.clone();
            minus.values[k] -= h;
            let lp = loss_and_gradient(&plus, batch.view()).unwrap().0;
            let lm = loss_and_gradient(&minus, batch.view()).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

#[test]
fn one_full_batch_sgd_round_equals_centralized_step() {
    for trial in 0..10u64 {
        let mut r = rng(300 + trial);
        let d = r.random_range(2..=6);
        let k = r.random_range(2..=5);
        let per = r.random_range(3..=12);
        let net = random_net(d, 2.min(d), trial);
        let all = random_rows(k * per, d, 400 + trial);
        let clients: Vec<ClientData> = (0..k)
            .map(|c| ClientData {
                client_id: c,
                rows: all
                    .slice(ndarray::s![c * per..(c + 1) * per, ..])
                    .to_owned(),
            })
            .collect();
        let lr = 0.05;
        let config = TrainConfig {
            local_epochs: 1,
            batch_size: per,
            rounds: 1,
            client_optimizer: ClientOptimizer::Sgd { lr },
            server_lr: 1.0,
            server_momentum: 0.0,
            participation: 1.0,
            seed: trial,
            ..TrainConfig::default()
        };
        let mut server = ServerState::new(net.len());
        let (fed, log) = fedavg_round(&net, &mut server, &clients, &config, 0).unwrap();
        assert_eq!(log.participants, (0..k).collect::<Vec<_>>());

        let (_, g) = loss_and_gradient(&net, all.view()).unwrap();
        for (i, (a, b)) in fed.values.iter().zip(&net.values).enumerate() {
            let want = b - lr * g[i];
            assert!(
                (a - want).abs() <= 1e-8,
                "trial {trial} param {i}: {a} vs {want}"
            );
        }
    }
}

#[test]
fn full_batch_local_training_ignores_row_order() {
    let net = random_net(5, 3, 1);
    let rows = random_rows(20, 5, 2);
    let mut rev = rows.clone();
    rev.invert_axis(Axis(0));
    let opt = ClientOptimizer::Sgd { lr: 0.1 };
    let (a, _) = local_train(&net, rows.view(), opt, 3, 20, 0, &mut rng(1)).unwrap();
    let (b, _) = local_train(&net, rev.view(), opt, 3, 20, 0, &mut rng(2)).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn federated_round_is_deterministic_and_reduces_loss() {
    let net = random_net(6, 3, 4);
    let all = random_rows(60, 6, 5);
    let clients: Vec<ClientData> = (0..4)
        .map(|c| ClientData {
            client_id: c,
            rows: all.slice(ndarray::s![c * 15..(c + 1) * 15, ..]).to_owned(),
        })
        .collect();
    let config = TrainConfig {
        local_epochs: 2,
        batch_size: 8,
        participation: 0.5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut server = ServerState::new(net.len());
        let mut g = net.clone();
        for round in 0..10 {
            g = fedavg_round(&g, &mut server, &clients, &config, round)
                .unwrap()
                .0;
        }
        g
    };
    let a = run();
    assert_eq!(a, run());
    let before = loss_and_gradient(&net, all.view()).unwrap().0;
    let after = loss_and_gradient(&a, all.view()).unwrap().0;
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn identical_client_data_matches_single_client_training() {
    // with equal shards holding the same rows, the weighted average equals
    // any one client's update
    let net = random_net(4, 2, 8);
    let rows = random_rows(10, 4, 9);
    let clients: Vec<ClientData> = (0..3)
        .map(|c| ClientData {
            client_id: c,
            rows: rows.clone(),
        })
        .collect();
    let config = TrainConfig {
        local_epochs: 2,
        batch_size: 10,
        client_optimizer: ClientOptimizer::Sgd { lr: 0.05 },
        server_momentum: 0.0,
        participation: 1.0,
        ..TrainConfig::default()
    };
    let (fed, _) =
        fedavg_round(&net, &mut ServerState::new(net.len()), &clients, &config, 0).unwrap();
    let (solo, _) = local_train(
        &net,
        rows.view(),
        config.client_optimizer,
        2,
        10,
        0,
        &mut rng(0),
    )
    .unwrap();
    for (a, b) in fed.values.iter().zip(&solo.values) {
        assert!((a - b).abs() < 1e-12);
    }
}
