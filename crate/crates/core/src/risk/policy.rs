use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::ingest::FlowMeta;
use crate::io;
use crate::segment::NOISE;
use crate::{Error, Result};

pub const POLICY_COLUMNS: [&str; 11] = [
    "SRC_CID",
    "DST_CID",
    "SRC_CID_ORSc",
    "DID",
    "SIP",
    "DIP",
    "SPort",
    "DPort",
    "Decision",
    "LIME_Top_Features",
    "SHAP_Top_Features",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Block,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Allow => "Allow",
            Decision::Block => "Block",
        })
    }
}

/// Destination segment of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DstCluster {
    Cluster(i64),
    /// Destination IP never appears as a source among segmented flows.
    External,
}

impl fmt::Display for DstCluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DstCluster::Cluster(c) => write!(f, "{c}"),
            DstCluster::External => f.write_str("external"),
        }
    }
}

/// Allow only intra-segment traffic from a non-noise cluster with `R ≤ τ`.
pub fn decide(src: i64, dst: DstCluster, src_risk: f64, tau: f64) -> Decision {
    match dst {
        DstCluster::Cluster(d) if d == src && src != NOISE && src_risk <= tau => Decision::Allow,
        _ => Decision::Block,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRow {
    pub src_cid: i64,
    pub dst_cid: DstCluster,
    pub src_risk: f64,
    pub did: usize,
    pub sip: String,
    pub dip: String,
    pub sport: String,
    pub dport: String,
    pub decision: Decision,
    pub lime_top: String,
    pub shap_top: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyTable {
    pub rows: Vec<PolicyRow>,
}

impl PolicyTable {
    pub fn allow_count(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.decision == Decision::Allow)
            .count()
    }

    pub fn intra_count(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.dst_cid == DstCluster::Cluster(r.src_cid))
            .count()
    }

    /// CSV bytes; risks use fixed six-decimal formatting.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(POLICY_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.src_cid.to_string(),
                r.dst_cid.to_string(),
                format!("{:.6}", r.src_risk),
                r.did.to_string(),
                r.sip.clone(),
                r.dip.clone(),
                r.sport.clone(),
                r.dport.clone(),
                r.decision.to_string(),
                r.lime_top.clone(),
                r.shap_top.clone(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.to_csv_bytes()?)
    }
}

/// One policy row per segmented flow, in input order.
///
/// `row_ids[i]` is the flow's row in the source table (the DID), `meta[i]`
/// its addressing and `labels[i]` its segment. A device's segment is the
/// majority label over flows it sources (lowest id on ties).
/// `explanations` maps DID to `(lime, shap)` top-feature strings.
pub fn generate_policy(
    row_ids: &[usize],
    meta: &[&FlowMeta],
    labels: &[i64],
    cluster_risk: &BTreeMap<i64, f64>,
    tau: f64,
    explanations: Option<&BTreeMap<usize, (String, String)>>,
) -> Result<PolicyTable> {
    if meta.len() != labels.len() || row_ids.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: meta.len().min(row_ids.len()),
        });
    }
    let mut votes: BTreeMap<&str, BTreeMap<i64, usize>> = BTreeMap::new();
    for (m, &l) in meta.iter().zip(labels) {
        *votes
            .entry(m.src_ip.as_str())
            .or_default()
            .entry(l)
            .or_insert(0) += 1;
    }
    let device: BTreeMap<&str, i64> = votes
        .into_iter()
        .map(|(ip, v)| {
            let best = v
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&c, _)| c)
                .expect("non-empty votes");
            (ip, best)
        })
        .collect();

    let mut rows = Vec::with_capacity(labels.len());
    for ((&did, m), &src) in row_ids.iter().zip(meta).zip(labels) {
        let dst = device
            .get(m.dst_ip.as_str())
            .map_or(DstCluster::External, |&c| DstCluster::Cluster(c));
        let src_risk = *cluster_risk
            .get(&src)
            .ok_or_else(|| Error::invalid(format!("no risk for cluster {src}")))?;
        let (lime_top, shap_top) = explanations
            .and_then(|e| e.get(&did))
            .cloned()
            .unwrap_or_default();
        rows.push(PolicyRow {
            src_cid: src,
            dst_cid: dst,
            src_risk,
            did,
            sip: m.src_ip.clone(),
            dip: m.dst_ip.clone(),
            sport: m.src_port.clone(),
            dport: m.dst_port.clone(),
            decision: decide(src, dst, src_risk, tau),
            lime_top,
            shap_top,
        });
    }
    Ok(PolicyTable { rows })
}
