//! Model files: one JSON document holding the network config, the training
//! seed and every tensor as base64 little-endian `f32` with its shape.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::params::{NetConfig, NetParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    config: NetConfig,
    rng_seed: u64,
    tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub rng_seed: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                let bytes: Vec<u8> = t.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
                TensorRecord { name, shape: t.shape().to_vec(), data: STANDARD.encode(bytes) }
            })
            .collect();
        let file = CheckpointFile { version: CHECKPOINT_VERSION, config: self.params.config.clone(), rng_seed: self.rng_seed, tensors };
        serde_json::to_string(&file).expect("checkpoint serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let mut params = NetParams::init(&file.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        {
            let mut slots = params.tensors_mut();
            if slots.len() != file.tensors.len() {
                return Err(Error::Checkpoint(format!("{} tensors, config needs {}", file.tensors.len(), slots.len())));
            }
            for ((name, slot), rec) in slots.iter_mut().zip(&file.tensors) {
                if *name != rec.name || slot.shape() != rec.shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} {:?} does not match {} {:?}",
                        rec.name,
                        rec.shape,
                        name,
                        slot.shape()
                    )));
                }
                let bytes = STANDARD.decode(&rec.data).map_err(|e| Error::Checkpoint(format!("{}: {e}", rec.name)))?;
                if bytes.len() != slot.len() * 4 {
                    return Err(Error::Checkpoint(format!("{}: {} bytes for {} values", rec.name, bytes.len(), slot.len())));
                }
                for (v, chunk) in slot.iter_mut().zip(bytes.chunks_exact(4)) {
                    let x = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                    if !x.is_finite() {
                        return Err(Error::Checkpoint(format!("{}: non-finite value", rec.name)));
                    }
                    *v = x;
                }
            }
        }
        Ok(Self { params, rng_seed: file.rng_seed })
    }

    /// Values as they will be after a save/load cycle.
    pub fn quantized(&self) -> Self {
        let mut params = self.params.clone();
        for (_, mut t) in params.tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
        Self { params, rng_seed: self.rng_seed }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
