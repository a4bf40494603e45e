//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "markfeed-checkpoint",
//!   "version": 1,
//!   "config": { "src_vocab_size": .., "trg_vocab_size": .., "embed_dim": ..,
//!               "hidden_dim": .., "seed": .., "precision": "f64" },
//!   "src_vocab_hash": "<16 hex digits>",
//!   "trg_vocab_hash": "<16 hex digits>",
//!   "tensors": { "<name>": { "rows": r, "cols": c, "data": [row-major f64] }, .. }
//! }
//! ```
//!
//! Tensor names are those of [`TENSOR_NAMES`]. Floats are written in
//! shortest round-trip form, so save/load is lossless.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams, Tensor, TENSOR_NAMES};
use crate::error::{Error, Result};

pub const FORMAT: &str = "markfeed-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub src_vocab_hash: String,
    pub trg_vocab_hash: String,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, src_vocab_hash: &str, trg_vocab_hash: &str) -> Self {
        let tensors = TENSOR_NAMES
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: params.config.clone(),
            src_vocab_hash: src_vocab_hash.into(),
            trg_vocab_hash: trg_vocab_hash.into(),
            tensors,
        }
    }

    pub fn into_params(mut self) -> Result<ModelParams> {
        if self.format != FORMAT {
            return Err(Error::Config(format!(
                "not a checkpoint: format {:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut params = ModelParams::init(self.config.clone())?;
        for (name, slot) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
            *slot = self
                .tensors
                .remove(*name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
        }
        if let Some(extra) = self.tensors.keys().next() {
            return Err(Error::Config(format!(
                "unknown tensor {extra} in checkpoint"
            )));
        }
        params.check_shapes()?;
        if !params.is_finite() {
            return Err(Error::Numerical(
                "checkpoint contains non-finite values".into(),
            ));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Fails unless the stored vocabulary fingerprints match.
    pub fn check_vocabs(&self, src_hash: &str, trg_hash: &str) -> Result<()> {
        if self.src_vocab_hash != src_hash || self.trg_vocab_hash != trg_hash {
            return Err(Error::Config(
                "checkpoint was trained with different vocabularies".into(),
            ));
        }
        Ok(())
    }
}
