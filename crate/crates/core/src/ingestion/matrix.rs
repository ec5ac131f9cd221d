//! The `SAEMAT01` dense matrix format.
//!
//! Layout: 8-byte magic `SAEMAT01`, little-endian `u32` row count, `u32`
//! column count, then `rows * cols` little-endian IEEE-754 `f32` values in
//! row-major order. Nothing follows the data.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::FeatureMatrix;

pub const MAGIC: &[u8; 8] = b"SAEMAT01";
const HEADER_LEN: usize = 16;

/// A decoded matrix before any domain validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl RawMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic, expected SAEMAT01".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("header {rows}x{cols} overflows")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "{rows}x{cols} matrix needs {expected} data bytes, found {}",
            body.len()
        )));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(RawMatrix { rows, cols, values })
}

pub fn encode(rows: usize, cols: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::Dimension { expected: rows * cols, found: values.len() });
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols)?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_raw(path: impl AsRef<Path>, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(rows, cols, values)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn write_feature_matrix(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    write_raw(path, m.n_features(), m.dim(), m.values())
}

/// Reads and validates one layer's feature matrix. `expected_dim`, when
/// given, must match the file's column count.
pub fn load_feature_matrix(path: impl AsRef<Path>, layer_id: u32, expected_dim: Option<usize>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if let Some(dim) = expected_dim {
        if raw.cols != dim {
            return Err(Error::Validation(format!(
                "{}: matrix has dimension {}, manifest expects {dim}",
                path.display(),
                raw.cols
            )));
        }
    }
    FeatureMatrix::new(layer_id, raw.rows, raw.cols, raw.values).map_err(|e| match e {
        Error::DegenerateVector { row: Some(r) } => {
            Error::Validation(format!("{}: all-zero vector at row {r}", path.display()))
        }
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}
