//! Self-describing JSON checkpoints: configuration, tokenizer and the flat
//! parameter buffer. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelRole, PolicyError, PolicyModel, Tokenizer};

pub const CHECKPOINT_FORMAT: &str = "ugro-policy-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub role: ModelRole,
    pub tokenizer: Tokenizer,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn new(model: &PolicyModel<f32>, tokenizer: &Tokenizer) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: *model.config(),
            role: model.role(),
            tokenizer: tokenizer.clone(),
            params: model.params().to_vec(),
        }
    }

    pub fn into_parts(self) -> Result<(PolicyModel<f32>, Tokenizer), PolicyError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.tokenizer.vocab_size() != self.config.vocab_size {
            return Err(PolicyError::Checkpoint(format!(
                "tokenizer has {} entries but model vocab_size is {}",
                self.tokenizer.vocab_size(),
                self.config.vocab_size
            )));
        }
        let model = PolicyModel::from_parts(self.config, self.params, self.role)?;
        Ok((model, self.tokenizer))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint serializes")
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &PolicyModel<f32>,
    tokenizer: &Tokenizer,
) -> Result<(), PolicyError> {
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(PolicyError::Checkpoint("non-finite parameter".into()));
    }
    fs::write(path, Checkpoint::new(model, tokenizer).to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PolicyModel<f32>, Tokenizer), PolicyError> {
    let bytes = fs::read(path)?;
    let ck: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    ck.into_parts()
}
