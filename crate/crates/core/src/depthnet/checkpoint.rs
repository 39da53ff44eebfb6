//! Checkpoint container.
//!
//! `b"PMDC"`, u32 format version, u32 header length, a JSON header
//! (architecture, training metadata, parameter count), then the weights as
//! little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, DepthModel, Network, TrainingMeta};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMDC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: Architecture,
    meta: TrainingMeta,
    param_count: usize,
}

pub fn encode_checkpoint(model: &DepthModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        format_version: CHECKPOINT_VERSION,
        architecture: model.architecture().clone(),
        meta: model.meta.clone(),
        param_count: model.params().len(),
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + 4 * model.params().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DepthModel> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(hlen)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
    let body = &bytes[header_end..];
    if body.len() != header.param_count * 4 {
        return Err(Error::Format(format!(
            "checkpoint holds {} weight bytes, header says {} parameters",
            body.len(),
            header.param_count
        )));
    }
    let params = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut model = DepthModel::from_params(Network::new(header.architecture)?, params)?;
    model.meta = header.meta;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &DepthModel) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

/// Loads a checkpoint; when `resolution` is given the model must match it.
pub fn load_checkpoint(path: &Path, resolution: Option<usize>) -> Result<DepthModel> {
    let model = decode_checkpoint(&fs::read(path)?)?;
    if let Some(r) = resolution {
        if model.architecture().resolution != r {
            return Err(Error::shape((r, r), (model.architecture().resolution, model.architecture().resolution)));
        }
    }
    Ok(model)
}
