//! Self-describing JSON checkpoints: configuration, vocabulary, limits and
//! every parameter as name, shape and row-major values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Limits, Vocabulary};
use crate::model::{Model, ModelConfig};
use crate::params::Params;
use crate::tensor::{Tensor, TensorError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    limits: Limits,
    vocab: Vocabulary,
    params: Vec<ParamRecord>,
}

/// A trained model together with what is needed to encode raw text for it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub limits: Limits,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format_version: FORMAT_VERSION,
            config: self.model.config().clone(),
            limits: self.limits,
            vocab: self.vocab.clone(),
            params: self
                .model
                .params()
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: header.format_version,
            });
        }
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if file.vocab.len() != file.config.vocab_size {
            return Err(CheckpointError::Format(format!(
                "vocabulary has {} entries but the model expects {}",
                file.vocab.len(),
                file.config.vocab_size
            )));
        }
        let mut params = Params::new();
        for rec in file.params {
            if params.id(&rec.name).is_some() {
                return Err(CheckpointError::Format(format!("duplicate parameter `{}`", rec.name)));
            }
            let t = Tensor::new(rec.shape, rec.data)?;
            params.insert(rec.name, t);
        }
        Ok(Self {
            model: Model::from_params(file.config, params)?,
            vocab: file.vocab,
            limits: file.limits,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 over parameter names, shapes and the bit patterns of values.
    pub fn hash(&self) -> String {
        params_hash(self.model.params())
    }
}

pub fn params_hash(params: &Params) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
