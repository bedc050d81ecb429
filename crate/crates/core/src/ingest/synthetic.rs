use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FlowMeta, RawFlowTable, Schema};
use crate::rng::{self, tag};
use crate::{Error, Result};

const FEATURES: [&str; 12] = [
    "dur", "sbytes", "dbytes", "spkts", "dpkts", "rate", "sload", "dload", "sintpkt", "dintpkt",
    "tcprtt", "smean",
];
/// Protocol identifiers as they appear in IIoT flow captures.
const PROTOCOLS: [&str; 8] = ["6", "17", "2054", "35020", "0", "2", "58", "1"];
const SERVICE_PORTS: [&str; 8] = ["502", "53", "0", "44818", "0", "0", "0", "0"];
/// Features pushed by every attack regime.
const ATTACK_SHIFTED: [usize; 4] = [0, 3, 5, 6];
const ATTACK_TYPES: usize = 3;
const ATTACKERS: usize = 4;

/// Parameters of the synthetic flow corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub attack_fraction: f64,
    pub n_protocols: usize,
    /// Attack mean shift on the shifted feature subset, in benign standard
    /// deviations.
    pub separation: f64,
    pub devices_per_protocol: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 5000,
            attack_fraction: 0.073,
            n_protocols: 4,
            separation: 6.0,
            devices_per_protocol: 12,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    /// Errors name the offending `data.synthetic.*` key.
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: String| Err(Error::config(format!("data.synthetic.{f}"), r));
        if self.rows < 20 {
            return bad("rows", format!("needs >= 20 rows, got {}", self.rows));
        }
        if !(self.attack_fraction > 0.0 && self.attack_fraction < 1.0) {
            return bad("attack_fraction", "must lie in (0, 1)".into());
        }
        if self.n_protocols == 0 || self.n_protocols > PROTOCOLS.len() {
            return bad("n_protocols", format!("must be in 1..={}", PROTOCOLS.len()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad("separation", "must be positive".into());
        }
        if self.devices_per_protocol < 2 {
            return bad("devices_per_protocol", "must be >= 2".into());
        }
        Ok(())
    }
}

pub fn synthetic_schema() -> Schema {
    Schema {
        numeric: FEATURES.iter().map(|s| s.to_string()).collect(),
        categorical: vec!["proto".into()],
        src_ip: "saddr".into(),
        dst_ip: "daddr".into(),
        src_port: "sport".into(),
        dst_port: "dport".into(),
        label: Some("target".into()),
        protocol: Some("proto".into()),
    }
}

/// Labeled flows drawn from per-protocol Gaussian regimes.
///
/// Benign rows of protocol `p` come from one of two unit-variance behaviour
/// regimes around a protocol mean; attack rows shift [`ATTACK_SHIFTED`] by
/// `separation` standard deviations (plus a per-attack-type offset) and carry
/// 1.5x wider noise. Feature columns get fixed location offsets so the raw
/// table is not already standardized.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<RawFlowTable> {
    spec.validate()?;
    let n = spec.rows;

    let mut rng = rng::stream(spec.seed, tag::SYNTHETIC, 0);
    let d = FEATURES.len();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let location: Vec<f64> = (0..d).map(|j| 10.0 * (j as f64 + 1.0)).collect();
    let protocol_means: Vec<Vec<f64>> = (0..spec.n_protocols)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let regime_offsets: Vec<Vec<Vec<f64>>> = (0..spec.n_protocols)
        .map(|_| {
            (0..2)
                .map(|_| (0..d).map(|_| rng.random_range(-0.75..0.75)).collect())
                .collect()
        })
        .collect();

    let n_attack = ((n as f64 * spec.attack_fraction).round() as usize).clamp(1, n - 1);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_attack)).collect();
    labels.shuffle(&mut rng);

    let device = |p: usize, i: usize| format!("10.{p}.0.{}", i + 1);
    let mut numeric = Array2::<f64>::zeros((n, d));
    let mut categorical = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);

    for (row, &label) in labels.iter().enumerate() {
        let p = rng.random_range(0..spec.n_protocols);
        let mut mean = protocol_means[p].clone();
        let scale;
        let (src_ip, dst_ip);
        if label == 0 {
            let regime = rng.random_range(0..2);
            for (m, o) in mean.iter_mut().zip(&regime_offsets[p][regime]) {
                *m += o;
            }
            scale = 1.0;
            let src = rng.random_range(0..spec.devices_per_protocol);
            let mut dst = rng.random_range(0..spec.devices_per_protocol - 1);
            if dst >= src {
                dst += 1;
            }
            src_ip = device(p, src);
            dst_ip = device(p, dst);
        } else {
            let kind = rng.random_range(0..ATTACK_TYPES);
            for &j in &ATTACK_SHIFTED {
                mean[j] += spec.separation;
            }
            mean[7 + kind] += 2.0;
            scale = 1.5;
            src_ip = format!("192.168.100.{}", rng.random_range(1..=ATTACKERS));
            let target_proto = rng.random_range(0..spec.n_protocols);
            dst_ip = device(target_proto, rng.random_range(0..spec.devices_per_protocol));
        }
        for j in 0..d {
            numeric[[row, j]] = location[j] + mean[j] + scale * unit.sample(&mut rng);
        }
        let sport = rng.random_range(1024u32..65535).to_string();
        let dport = if label == 0 {
            SERVICE_PORTS[p].to_string()
        } else {
            ["22", "23", "80", "502", "8080"]
                .choose(&mut rng)
                .expect("nonempty")
                .to_string()
        };
        categorical.push(vec![PROTOCOLS[p].to_string()]);
        meta.push(FlowMeta {
            src_ip,
            dst_ip,
            src_port: sport,
            dst_port: dport,
            label: Some(label),
            protocol: Some(PROTOCOLS[p].to_string()),
        });
    }

    Ok(RawFlowTable {
        numeric_names: FEATURES.iter().map(|s| s.to_string()).collect(),
        numeric,
        categorical_names: vec!["proto".into()],
        categorical,
        meta,
        dropped_rows: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::super::load::write_csv_to;
    use super::*;
    use crate::linalg::squared_distance;

    #[test]
    fn attack_count_follows_fraction() {
        let spec = SyntheticSpec {
            rows: 1000,
            attack_fraction: 0.073,
            ..Default::default()
        };
        let t = generate_synthetic(&spec).unwrap();
        assert_eq!(t.len(), 1000);
        assert_eq!(t.attack_count(), 73);
        assert!(t.has_labels());
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = SyntheticSpec {
            rows: 300,
            ..Default::default()
        };
        let bytes = |t: &RawFlowTable| {
            let mut buf = Vec::new();
            write_csv_to(&mut buf, t, &synthetic_schema()).unwrap();
            buf
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = generate_synthetic(&SyntheticSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic(&SyntheticSpec {
            rows: 19,
            ..Default::default()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            attack_fraction: 1.0,
            ..Default::default()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            n_protocols: 9,
            ..Default::default()
        })
        .is_err());
    }

    /// Exhaustive-restart 2-means (Lloyd from every pair of seed rows drawn
    /// from a fixed subset, keep the lowest inertia).
    fn two_means(x: &Array2<f64>) -> Vec<usize> {
        let n = x.nrows();
        let rows: Vec<&[f64]> = (0..n).map(|i| x.row(i).to_slice().unwrap()).collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let candidates: Vec<usize> = (0..n).step_by(n / 12).collect();
        for &a in &candidates {
            for &b in &candidates {
                if a >= b {
                    continue;
                }
                let mut c = [rows[a].to_vec(), rows[b].to_vec()];
                let mut assign = vec![0usize; n];
                for _ in 0..50 {
                    for (i, r) in rows.iter().enumerate() {
                        assign[i] =
                            usize::from(squared_distance(r, &c[1]) < squared_distance(r, &c[0]));
                    }
                    for (k, centre) in c.iter_mut().enumerate() {
                        let members: Vec<&&[f64]> = rows
                            .iter()
                            .zip(&assign)
                            .filter(|(_, &g)| g == k)
                            .map(|(r, _)| r)
                            .collect();
                        if members.is_empty() {
                            continue;
                        }
                        for (j, v) in centre.iter_mut().enumerate() {
                            *v = members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64;
                        }
                    }
                }
                let inertia: f64 = rows
                    .iter()
                    .zip(&assign)
                    .map(|(r, &g)| squared_distance(r, &c[g]))
                    .sum();
                if best.as_ref().is_none_or(|(bi, _)| inertia < *bi) {
                    best = Some((inertia, assign));
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn six_sigma_attacks_are_recoverable_by_two_means() {
        let spec = SyntheticSpec {
            rows: 600,
            attack_fraction: 0.5,
            separation: 6.0,
            seed: 11,
            ..Default::default()
        };
        let t = generate_synthetic(&spec).unwrap();
        let assign = two_means(&t.numeric);
        let agree = t
            .meta
            .iter()
            .zip(&assign)
            .filter(|(m, &g)| m.label == Some(g as u8))
            .count();
        let agreement = agree.max(t.len() - agree) as f64 / t.len() as f64;
        assert!(agreement >= 0.99, "agreement {agreement}");
    }
}
