//! Model checkpoints: a short versioned header followed by a bincode body.
//!
//! Adam moments are not stored; a checkpoint captures the trained function
//! and the training RNG, not a resumable optimizer state.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::trainer::{GeoClipModel, Trainer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: GeoClipModel,
    pub rng: Option<ChaCha8Rng>,
    /// Completed training epochs.
    pub epochs: u32,
}

impl Checkpoint {
    /// Snapshot of a trainer's model, RNG and progress.
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            model: trainer.model().clone(),
            rng: Some(trainer.rng().clone()),
            epochs: trainer.epochs_done(),
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bincode::serialize_into(&mut out, ckpt)
        .map_err(|e| GeoError::Format(format!("cannot serialize checkpoint: {e}")))?;
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(GeoError::Format("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice"));
    if version != CHECKPOINT_VERSION {
        return Err(GeoError::Format(format!("unsupported checkpoint version {version}")));
    }
    let body = &bytes[8..];
    let ckpt: Checkpoint =
        bincode::deserialize(body).map_err(|e| GeoError::Corruption(format!("checkpoint body: {e}")))?;
    let used = bincode::serialized_size(&ckpt).map_err(|e| GeoError::Corruption(e.to_string()))?;
    if used as usize != body.len() {
        return Err(GeoError::Corruption(format!(
            "{} trailing bytes after checkpoint body",
            body.len() - used as usize
        )));
    }
    if ckpt.model.head.out_dim() != ckpt.model.encoder.embed_dim() {
        return Err(GeoError::Corruption(format!(
            "image head emits {} dims but the encoder emits {}",
            ckpt.model.head.out_dim(),
            ckpt.model.encoder.embed_dim()
        )));
    }
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(super::with_path(path))?)
}
