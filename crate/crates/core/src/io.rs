//! Artifact encodings.
//!
//! Dense matrices are stored as bare little-endian `f64` values in row-major
//! order; shape and provenance travel in a JSON sidecar next to the blob.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixShape {
    pub rows: usize,
    pub cols: usize,
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn le_bytes_to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::invalid(format!(
            "binary blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<MatrixShape> {
    let values: Vec<f64> = m.iter().copied().collect();
    write_bytes(path, &f64s_to_le_bytes(&values))?;
    Ok(MatrixShape {
        rows: m.nrows(),
        cols: m.ncols(),
    })
}

pub fn read_matrix(path: &Path, shape: &MatrixShape) -> Result<Array2<f64>> {
    let values = le_bytes_to_f64s(&read_bytes(path)?)?;
    if values.len() != shape.rows * shape.cols {
        return Err(Error::DimensionMismatch {
            expected: shape.rows * shape.cols,
            got: values.len(),
        });
    }
    Array2::from_shape_vec((shape.rows, shape.cols), values)
        .map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_bytes(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json_lines<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8_lossy(&bytes);
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_blob_is_little_endian_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = array![[1.0, 2.0], [3.0, -0.5]];
        let shape = write_matrix(&path, &m).unwrap();
        let bytes = read_bytes(&path).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[8..16], &2.0f64.to_le_bytes());
        assert_eq!(read_matrix(&path, &shape).unwrap(), m);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        assert!(le_bytes_to_f64s(&[0u8; 9]).is_err());
    }
}
