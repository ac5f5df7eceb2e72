//! Checkpoint container: every parameter by name, the Adam moments, the
//! epoch counter, the config (plus its hash) and the shuffle RNG state.
//! Values are stored as raw little-endian f32, so a save/load round trip is
//! bit-exact and continued training is identical to uninterrupted training.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tstnet_core::nn::ParamSet;
use tstnet_core::optim::AdamState;
use tstnet_core::Tensor;

use crate::config::TrainConfig;

pub const MAGIC: [u8; 4] = *b"TSCK";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    epoch: usize,
    config_hash: u64,
    config: TrainConfig,
    rng_state: u64,
    adam_step: u64,
    params: Vec<ParamMeta>,
}

pub struct Checkpoint {
    pub epoch: usize,
    pub rng_state: u64,
    pub config: TrainConfig,
    pub set: ParamSet<f32>,
    pub adam: AdamState<f32>,
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let header = Header {
        version: 1,
        epoch: ckpt.epoch,
        config_hash: ckpt.config.hash(),
        config: ckpt.config.clone(),
        rng_state: ckpt.rng_state,
        adam_step: ckpt.adam.step,
        params: ckpt
            .set
            .iter()
            .map(|p| ParamMeta { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    let mut push = |t: &Tensor<f32>| {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for (i, p) in ckpt.set.iter().enumerate() {
        push(&p.value);
        push(&ckpt.adam.m[i]);
        push(&ckpt.adam.v[i]);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| CheckpointError::Corrupt(format!("header parse: {e}")))?;
    if header.version != 1 {
        return Err(CheckpointError::Corrupt(format!("unknown version {}", header.version)));
    }
    let mut offset = 8 + header_len;
    let mut take = |shape: &[usize]| -> Result<Tensor<f32>, CheckpointError> {
        let n: usize = shape.iter().product();
        let end = offset + n * 4;
        let slice = bytes
            .get(offset..end)
            .ok_or_else(|| CheckpointError::Corrupt("truncated payload".into()))?;
        offset = end;
        let data = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(shape.to_vec(), data)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))
    };
    let mut set = ParamSet::new();
    let mut m = Vec::with_capacity(header.params.len());
    let mut v = Vec::with_capacity(header.params.len());
    for meta in &header.params {
        let value = take(&meta.shape)?;
        m.push(take(&meta.shape)?);
        v.push(take(&meta.shape)?);
        set.add(meta.name.clone(), value);
    }
    if offset != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after payload",
            bytes.len() - offset
        )));
    }
    if header.config_hash != header.config.hash() {
        return Err(CheckpointError::Corrupt("config hash does not match config".into()));
    }
    Ok(Checkpoint {
        epoch: header.epoch,
        rng_state: header.rng_state,
        config: header.config,
        set,
        adam: AdamState { m, v, step: header.adam_step },
    })
}

/// Check that a loaded parameter set lines up name-for-name with a freshly
/// initialized model of the same config.
pub fn verify_against_model(
    ckpt: &Checkpoint,
    reference: &ParamSet<f32>,
) -> Result<(), CheckpointError> {
    if ckpt.set.len() != reference.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} parameters in checkpoint, model has {}",
            ckpt.set.len(),
            reference.len()
        )));
    }
    for (a, b) in ckpt.set.iter().zip(reference.iter()) {
        if a.name != b.name || a.value.shape() != b.value.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "parameter {} {:?} vs model {} {:?}",
                a.name,
                a.value.shape(),
                b.name,
                b.value.shape()
            )));
        }
    }
    Ok(())
}
