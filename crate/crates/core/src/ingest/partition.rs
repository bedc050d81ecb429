use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::FlowMeta;
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Rows held by one simulated client. Indices refer to rows of the flow table
/// and are a subset of the train split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub row_indices: Vec<usize>,
    pub n_k: usize,
}

fn group_by_protocol<'a>(
    sidecar: &'a [FlowMeta],
    rows: &[usize],
) -> Result<BTreeMap<&'a str, Vec<usize>>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        let proto = sidecar
            .get(r)
            .ok_or_else(|| Error::invalid(format!("row {r} out of range")))?
            .protocol
            .as_deref()
            .ok_or_else(|| Error::invalid("protocol column required for Dirichlet partitioning"))?;
        groups.entry(proto).or_default().push(r);
    }
    Ok(groups)
}

/// Splits the training rows over `k` clients, protocol class by protocol
/// class, with Dirichlet(`alpha`) proportions.
///
/// For each class (in sorted protocol order) the K proportions are drawn
/// first as normalized Gamma(alpha, 1) variates, then the class rows are
/// shuffled and cut at `floor(cumsum(p) * n_class)`. Clients left empty
/// receive one row from the currently largest shard.
pub fn dirichlet_partition(
    sidecar: &[FlowMeta],
    train_idx: &[usize],
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 clients"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("Dirichlet alpha must be positive"));
    }
    if train_idx.len() < k {
        return Err(Error::invalid(format!(
            "{} training rows cannot fill {k} clients",
            train_idx.len()
        )));
    }
    let groups = group_by_protocol(sidecar, train_idx)?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::stream(seed, tag::PARTITION, 0);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];

    for rows in groups.values() {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 {
            draws.iter().map(|g| g / total).collect()
        } else {
            vec![1.0 / k as f64; k]
        };
        let mut rows = rows.clone();
        rows.shuffle(&mut rng);
        let n = rows.len();
        let mut start = 0usize;
        let mut cum = 0.0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == k {
                n
            } else {
                ((cum * n as f64).floor() as usize).clamp(start, n)
            };
            shards[client].extend_from_slice(&rows[start..end]);
            start = end;
        }
    }

    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..k)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("k >= 2");
        let moved = shards[largest].pop().expect("largest shard is nonempty");
        shards[empty].push(moved);
    }

    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(client_id, mut rows)| {
            rows.sort_unstable();
            ClientShard {
                client_id,
                n_k: rows.len(),
                row_indices: rows,
            }
        })
        .collect())
}

/// Mean total-variation distance between each client's protocol mix and the
/// pooled mix.
pub fn protocol_distribution_tv(sidecar: &[FlowMeta], shards: &[ClientShard]) -> Result<f64> {
    let all: Vec<usize> = shards
        .iter()
        .flat_map(|s| s.row_indices.iter().copied())
        .collect();
    let global = group_by_protocol(sidecar, &all)?;
    let total = all.len() as f64;
    let mut sum = 0.0;
    for shard in shards {
        let local = group_by_protocol(sidecar, &shard.row_indices)?;
        let n = shard.row_indices.len().max(1) as f64;
        let tv: f64 = global
            .iter()
            .map(|(proto, rows)| {
                let p = rows.len() as f64 / total;
                let q = local.get(proto).map_or(0.0, |r| r.len() as f64 / n);
                (p - q).abs()
            })
            .sum::<f64>()
            * 0.5;
        sum += tv;
    }
    Ok(sum / shards.len() as f64)
}
