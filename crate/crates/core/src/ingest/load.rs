use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::info;
use ndarray::Array2;

use super::{FlowMeta, RawFlowTable, Schema};
use crate::{Error, Result};

/// Reads a flow CSV with a header row.
///
/// Rows whose feature cells fail to parse as finite numbers (or whose label is
/// not 0/1) are dropped and counted in [`RawFlowTable::dropped_rows`].
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawFlowTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_csv(file, schema)?;
    info!(
        "loaded {} rows from {} ({} dropped)",
        table.len(),
        path.display(),
        table.dropped_rows
    );
    Ok(table)
}

pub(crate) fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<RawFlowTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let numeric_cols = schema
        .numeric
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let categorical_cols = schema
        .categorical
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let src_ip = find(&schema.src_ip)?;
    let dst_ip = find(&schema.dst_ip)?;
    let src_port = find(&schema.src_port)?;
    let dst_port = find(&schema.dst_port)?;
    let label = schema.label.as_deref().map(find).transpose()?;
    let protocol = schema.protocol.as_deref().map(find).transpose()?;

    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut meta = Vec::new();
    let mut dropped = 0usize;

    for record in rdr.records() {
        let record = record?;
        let parsed: Option<Vec<f64>> = numeric_cols
            .iter()
            .map(|&c| {
                record
                    .get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        let cats: Option<Vec<String>> = categorical_cols
            .iter()
            .map(|&c| record.get(c).filter(|s| !s.is_empty()).map(str::to_string))
            .collect();
        let lab = match label {
            None => Some(None),
            Some(c) => match record.get(c).and_then(|s| s.parse::<f64>().ok()) {
                Some(0.0) => Some(Some(0u8)),
                Some(1.0) => Some(Some(1u8)),
                _ => None,
            },
        };
        let (Some(parsed), Some(cats), Some(lab)) = (parsed, cats, lab) else {
            dropped += 1;
            continue;
        };
        let cell = |c: usize| record.get(c).unwrap_or_default().to_string();
        numeric.extend(parsed);
        categorical.push(cats);
        meta.push(FlowMeta {
            src_ip: cell(src_ip),
            dst_ip: cell(dst_ip),
            src_port: cell(src_port),
            dst_port: cell(dst_port),
            label: lab,
            protocol: protocol.map(cell),
        });
    }

    if meta.is_empty() {
        return Err(Error::EmptyTable { dropped });
    }
    let numeric = Array2::from_shape_vec((meta.len(), numeric_cols.len()), numeric)
        .expect("row-major numeric buffer");
    Ok(RawFlowTable {
        numeric_names: schema.numeric.clone(),
        numeric,
        categorical_names: schema.categorical.clone(),
        categorical,
        meta,
        dropped_rows: dropped,
    })
}

/// Writes a table back out as CSV using the column names of `schema`.
pub fn write_csv(path: &Path, table: &RawFlowTable, schema: &Schema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(file, table, schema)
}

pub(crate) fn write_csv_to<W: Write>(
    writer: W,
    table: &RawFlowTable,
    schema: &Schema,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let protocol_is_feature = schema
        .protocol
        .as_ref()
        .is_some_and(|p| schema.categorical.contains(p) || schema.numeric.contains(p));
    let mut header: Vec<&str> = Vec::new();
    header.extend(table.numeric_names.iter().map(String::as_str));
    header.extend(table.categorical_names.iter().map(String::as_str));
    header.extend([
        schema.src_ip.as_str(),
        schema.dst_ip.as_str(),
        schema.src_port.as_str(),
        schema.dst_port.as_str(),
    ]);
    if let Some(l) = &schema.label {
        header.push(l);
    }
    if let (Some(p), false) = (&schema.protocol, protocol_is_feature) {
        header.push(p);
    }
    w.write_record(&header)?;

    for (i, m) in table.meta.iter().enumerate() {
        let mut rec: Vec<String> = table
            .numeric
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        rec.extend(table.categorical[i].iter().cloned());
        rec.extend([
            m.src_ip.clone(),
            m.dst_ip.clone(),
            m.src_port.clone(),
            m.dst_port.clone(),
        ]);
        if schema.label.is_some() {
            rec.push(m.label.map(|l| l.to_string()).unwrap_or_default());
        }
        if schema.protocol.is_some() && !protocol_is_feature {
            rec.push(m.protocol.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
