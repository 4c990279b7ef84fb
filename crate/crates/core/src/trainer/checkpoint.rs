use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::Adam;
use super::TrainConfig;
use crate::error::{CaganError, Result};
use crate::networks::ParamSet;

/// Leading bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 9] = b"CAGANCKPT";
/// Format written by this build; older and newer versions are refused.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = CHECKPOINT_MAGIC.len() + 4 + 32;

/// Complete training state at the end of a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub step: u64,
    pub generator: ParamSet<f32>,
    pub discriminator: ParamSet<f32>,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub config: TrainConfig,
    /// Triplet sampling stream, positioned after the last drawn batch.
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    /// Container bytes: magic, version (u32 LE), SHA-256 of the payload,
    /// then the bincode payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = bincode::serialize(self)
            .map_err(|e| CaganError::Integrity(format!("cannot encode checkpoint: {e}")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(CaganError::Integrity("not a checkpoint file (bad magic)".into()));
        }
        let mut version = [0u8; 4];
        version.copy_from_slice(&bytes[9..13]);
        let version = u32::from_le_bytes(version);
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(CaganError::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let payload = &bytes[HEADER_LEN..];
        if Sha256::digest(payload).as_slice() != &bytes[13..HEADER_LEN] {
            return Err(CaganError::Integrity("checkpoint checksum mismatch".into()));
        }
        let ckpt: Checkpoint = bincode::deserialize(payload)
            .map_err(|e| CaganError::Integrity(format!("cannot decode checkpoint: {e}")))?;
        if ckpt.format_version != version {
            return Err(CaganError::Integrity("header and payload versions disagree".into()));
        }
        Ok(ckpt)
    }
}

/// Writes `ckpt` through a temporary file and a rename.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| CaganError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CaganError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CaganError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
