//! Binary matrix format shared by histories, bases, weights and artifacts.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 0..8         | magic `GENROM\0\x01`                     |
//! | 8..12        | `u32` rank (1 for vectors, 2 for matrices) |
//! | 12..12+8·rank| `u64` extent of each dimension           |
//! | rest         | `f64` data, first index fastest (column-major) |

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"GENROM\x00\x01";

pub fn encode_array(dims: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(12 + 8 * dims.len() + 8 * data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 12 || bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = 12 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let at = 12 + 8 * i;
            u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + 8 * count {
        return Err(Error::Format(format!(
            "expected {} data bytes, found {}",
            8 * count,
            bytes.len() - header
        )));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    encode_array(&[m.nrows(), m.ncols()], m.as_slice())
}

/// Decodes a rank-1 or rank-2 array; vectors come back as one column.
pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let (dims, data) = decode_array(bytes)?;
    match dims.as_slice() {
        [n] => Ok(DMatrix::from_vec(*n, 1, data)),
        [r, c] => Ok(DMatrix::from_vec(*r, *c, data)),
        other => Err(Error::Format(format!("unsupported rank {}", other.len()))),
    }
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_matrix(m))?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    decode_matrix(&fs::read(path)?)
}

pub fn write_vector(path: impl AsRef<Path>, v: &DVector<f64>) -> Result<()> {
    fs::write(path, encode_array(&[v.len()], v.as_slice()))?;
    Ok(())
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::Format(format!("expected a vector, found {:?}", m.shape())));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// JSON sidecar written next to persisted bases and coefficient matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: usize,
    pub cols: usize,
    pub kind: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_hash: Option<String>,
    pub content_hash: String,
}

/// Writes `<stem>.bin` plus `<stem>.json` metadata.
pub fn write_with_sidecar(
    dir: impl AsRef<Path>,
    stem: &str,
    m: &DMatrix<f64>,
    kind: &str,
    tags: Vec<String>,
    reference_hash: Option<String>,
) -> Result<()> {
    let dir = dir.as_ref();
    write_matrix(dir.join(format!("{stem}.bin")), m)?;
    let sidecar = Sidecar {
        rows: m.nrows(),
        cols: m.ncols(),
        kind: kind.to_string(),
        tags,
        reference_hash,
        content_hash: crate::linalg::matrix_hash(m),
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}
