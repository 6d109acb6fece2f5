//! Versioned JSON checkpoints.
//!
//! Layout: an object with `format` (always `"riskdrive-checkpoint"`), `version`,
//! `params` (spec, combine mode and per-layer `inputs`, `outputs`, row-major `weights`,
//! `biases`), `target` (same shape), `adam` (config, step and moment arrays in tensor
//! order: weights then biases per layer) and `train_steps`. Floats are written with
//! round-trip precision, so save followed by load is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "riskdrive-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: NetworkParams,
    pub target: NetworkParams,
    pub adam: AdamState,
    pub train_steps: u64,
}

impl Checkpoint {
    pub fn new(
        params: NetworkParams,
        target: NetworkParams,
        adam: AdamState,
        train_steps: u64,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params,
            target,
            adam,
            train_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format tag {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.params.validate()?;
        self.target.validate()?;
        if self.params.spec != self.target.spec {
            return Err(Error::Checkpoint(
                "online and target networks differ in shape".into(),
            ));
        }
        if !self.adam.matches(&self.params) {
            return Err(Error::Checkpoint(
                "optimizer state does not match network".into(),
            ));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.validate()?;
    Ok(ckpt)
}
