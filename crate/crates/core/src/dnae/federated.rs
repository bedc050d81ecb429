use log::{info, warn};
use ndarray::{Array2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{local_train, Architecture, ClientOptimizer, ModelParams};
use crate::ingest::{ClientShard, FlowTable, SplitIndex};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Federated training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub client_optimizer: ClientOptimizer,
    pub server_lr: f64,
    pub server_momentum: f64,
    pub participation: f64,
    pub architecture: Architecture,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 3,
            batch_size: 64,
            rounds: 50,
            client_optimizer: ClientOptimizer::default(),
            server_lr: 1.0,
            server_momentum: 0.9,
            participation: 0.8,
            architecture: Architecture::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::config("train.local_epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config("train.participation", "must lie in (0, 1]"));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::config("train.server_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.server_momentum) {
            return Err(Error::config("train.server_momentum", "must lie in [0, 1)"));
        }
        if !(self.client_optimizer.learning_rate() >= 0.0) {
            return Err(Error::config(
                "train.client_optimizer.lr",
                "must be non-negative",
            ));
        }
        if self.architecture.latent == 0
            || self.architecture.encoder_hidden.contains(&0)
            || self.architecture.decoder_hidden.contains(&0)
        {
            return Err(Error::config(
                "train.architecture",
                "layer widths must be positive",
            ));
        }
        Ok(())
    }

    /// Number of clients sampled per round out of `k`.
    pub fn clients_per_round(&self, k: usize) -> usize {
        ((self.participation * k as f64 - 1e-9).ceil() as usize).clamp(1, k)
    }
}

/// One client's local training rows.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub client_id: usize,
    pub rows: Array2<f64>,
}

/// Server-side momentum buffer, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub velocity: Vec<f64>,
}

impl ServerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            velocity: vec![0.0; n_params],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub train_benign_mse: f64,
    pub val_benign_mse: Option<f64>,
    pub val_attack_mse: Option<f64>,
    pub participants: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub logs: Vec<RoundLog>,
}

/// `Σ (n_k / Σn) · θ_k`, accumulated in the given order.
pub fn weighted_average(updates: &[(&[f64], usize)]) -> Vec<f64> {
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    let mut avg = vec![0.0; updates.first().map_or(0, |(p, _)| p.len())];
    for (params, n) in updates {
        let w = *n as f64 / total as f64;
        for (a, p) in avg.iter_mut().zip(params.iter()) {
            *a += w * p;
        }
    }
    avg
}

/// Applies the pseudo-gradient `global − avg` through server momentum SGD:
/// `v ← m·v + Δ`, `θ ← θ − lr·v`.
pub fn server_step(
    global: &[f64],
    avg: &[f64],
    server: &mut ServerState,
    lr: f64,
    momentum: f64,
) -> Vec<f64> {
    global
        .iter()
        .zip(avg)
        .zip(server.velocity.iter_mut())
        .map(|((g, a), v)| {
            *v = momentum * *v + (g - a);
            g - lr * *v
        })
        .collect()
}

/// One federated round: sample `⌈participation·K⌉` clients without
/// replacement, train each from the current global model, average their
/// parameters weighted by sample count, and take a server momentum step.
///
/// A client whose local loss diverges is dropped from the round. The
/// returned log carries participants and the sample-weighted final client
/// loss; validation fields are left empty.
pub fn fedavg_round(
    global: &ModelParams,
    server: &mut ServerState,
    clients: &[ClientData],
    config: &TrainConfig,
    round: usize,
) -> Result<(ModelParams, RoundLog)> {
    if clients.is_empty() {
        return Err(Error::invalid("no clients"));
    }
    let k = clients.len();
    let m = config.clients_per_round(k);
    let mut sample_rng = rng::stream(config.seed, tag::CLIENT_SAMPLE, round as u64);
    let mut chosen = index::sample(&mut sample_rng, k, m).into_vec();
    chosen.sort_unstable();
    let participants: Vec<usize> = chosen.iter().map(|&i| clients[i].client_id).collect();

    let results: Vec<Option<(ModelParams, f64, usize)>> = chosen
        .par_iter()
        .map(|&i| {
            let c = &clients[i];
            if c.rows.nrows() == 0 {
                return Ok(None);
            }
            let mut rng = rng::stream(
                config.seed,
                tag::CLIENT_TRAIN,
                ((round as u64) << 32) | c.client_id as u64,
            );
            match local_train(
                global,
                c.rows.view(),
                config.client_optimizer,
                config.local_epochs,
                config.batch_size,
                c.client_id,
                &mut rng,
            ) {
                Ok((p, loss)) => Ok(Some((p, loss, c.rows.nrows()))),
                Err(Error::Divergence { client }) => {
                    warn!("round {round}: client {client} diverged; update discarded");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let updates: Vec<&(ModelParams, f64, usize)> = results.iter().flatten().collect();
    if updates.is_empty() {
        return Err(Error::invalid(format!(
            "round {round}: no sampled client produced an update"
        )));
    }
    let pairs: Vec<(&[f64], usize)> = updates
        .iter()
        .map(|(p, _, n)| (p.values.as_slice(), *n))
        .collect();
    let avg = weighted_average(&pairs);
    let total: usize = updates.iter().map(|(_, _, n)| n).sum();
    let mean_loss = updates
        .iter()
        .map(|(_, loss, n)| loss * *n as f64)
        .sum::<f64>()
        / total as f64;

    let mut next = global.clone();
    next.values = server_step(
        &global.values,
        &avg,
        server,
        config.server_lr,
        config.server_momentum,
    );
    Ok((
        next,
        RoundLog {
            round,
            train_benign_mse: mean_loss,
            val_benign_mse: None,
            val_attack_mse: None,
            participants,
        },
    ))
}

fn mean_error(params: &ModelParams, table: &FlowTable, rows: &[usize]) -> Result<Option<f64>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let x = table.features.select(Axis(0), rows);
    let errs = params.reconstruction_error(x.view())?;
    Ok(Some(errs.iter().sum::<f64>() / errs.len() as f64))
}

/// Full federated training over the given client shards.
///
/// When labels exist only benign rows train the model; validation error is
/// tracked separately for benign and attack validation rows.
pub fn train_federated(
    table: &FlowTable,
    shards: &[ClientShard],
    split: &SplitIndex,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let labels = table.labels();
    let keep = |r: &usize| labels.as_ref().is_none_or(|l| l[*r] == 0);

    let clients: Vec<ClientData> = shards
        .iter()
        .map(|s| {
            let rows: Vec<usize> = s.row_indices.iter().copied().filter(keep).collect();
            ClientData {
                client_id: s.client_id,
                rows: table.features.select(Axis(0), &rows),
            }
        })
        .collect();
    let train_rows: Vec<usize> = shards
        .iter()
        .flat_map(|s| s.row_indices.iter().copied())
        .filter(keep)
        .collect();
    let (val_benign, val_attack) = split
        .val_by_label(&table.sidecar)
        .unwrap_or_else(|| (split.val.clone(), Vec::new()));

    let mut params = ModelParams::glorot(table.dim(), &config.architecture, config.seed)?;
    let mut server = ServerState::new(params.len());
    let mut logs = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let (next, mut log) = fedavg_round(&params, &mut server, &clients, config, round)?;
        params = next;
        if let Some(mse) = mean_error(&params, table, &train_rows)? {
            log.train_benign_mse = mse;
        }
        log.val_benign_mse = mean_error(&params, table, &val_benign)?;
        log.val_attack_mse = mean_error(&params, table, &val_attack)?;
        info!(
            "round {:>3}: train {:.5} val benign {:?} val attack {:?}",
            round + 1,
            log.train_benign_mse,
            log.val_benign_mse,
            log.val_attack_mse
        );
        logs.push(log);
    }
    Ok(TrainedModel { params, logs })
}
