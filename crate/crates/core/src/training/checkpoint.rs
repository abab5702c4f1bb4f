//! Checkpoint files: one JSON header line followed by a little-endian parameter blob.
//!
//! The blob holds the pool rows (row-major), the 19 transition cells and `lambda`,
//! each stored at the width named by the header's `dtype`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelState;
use crate::emission::{ReferencePool, ScorerConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transition::{CollapsedTransitionTable, N_CELLS};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "N_pool")]
    pub n_pool: usize,
    pub variant: String,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub dtype: String,
    pub config: ScorerConfig,
}

pub fn save_checkpoint<T: Scalar>(model: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        dim: model.dim(),
        n_pool: model.pool.len(),
        variant: model.config.variant.to_string(),
        alpha: model.config.alpha,
        beta: model.config.beta,
        lambda: model.lambda.as_f64(),
        dtype: T::KIND.to_string(),
        config: model.config,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for v in model.parameters() {
        v.write_le(&mut bytes);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and rejects it unless its vectors have dimension `dim`.
pub fn load_checkpoint_expecting<T: Scalar>(path: impl AsRef<Path>, dim: usize) -> Result<ModelState<T>> {
    let model = load_checkpoint::<T>(path)?;
    if model.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: model.dim(),
        });
    }
    Ok(model)
}

fn decode<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    header.config.validate()?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unknown dtype {other:?}"))),
    };
    let (n, d) = (header.n_pool, header.dim);
    let count = n * d + N_CELLS + 1;
    let blob = &bytes[newline + 1..];
    if blob.len() != count * width {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            count * width,
            blob.len()
        )));
    }
    let values: Vec<T> = blob
        .chunks_exact(width)
        .map(|c| match width {
            4 => T::of(f32::read_le(c) as f64),
            _ => T::of(f64::read_le(c)),
        })
        .collect();
    if values.iter().any(|v| !v.as_f64().is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(ModelState {
        pool: ReferencePool::new(DMatrix::from_row_slice(n, d, &values[..n * d])),
        table: CollapsedTransitionTable::from_values(values[n * d..n * d + N_CELLS].to_vec())?,
        lambda: values[n * d + N_CELLS],
        config: header.config,
    })
}
