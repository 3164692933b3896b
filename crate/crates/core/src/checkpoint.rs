//! Versioned JSON checkpoints.
//!
//! ```text
//! {
//!   "format": "a2net-checkpoint",
//!   "version": 1,
//!   "model": { ModelConfig },
//!   "train": { TrainConfig },
//!   "vocabulary": ["<pad>", "<unk>", ...],
//!   "parameters": [ { "name": "...", "shape": [r, c], "values": [...] }, ... ]
//! }
//! ```
//!
//! Values are stored as shortest round-trip decimals, so a save/load cycle is
//! bit-exact. Loading rebuilds the architecture from `model` and requires the
//! stored parameter names and shapes to match it exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Vocabulary;
use crate::encoder::{EncoderError, PrecomputedEmbeddings};
use crate::model::{A2Net, ModelConfig};
use crate::train::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "a2net-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (format `{0}`)")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocabulary: Vocabulary,
    pub parameters: Vec<StoredParameter>,
}

impl Checkpoint {
    pub fn capture(model: &A2Net, train: &TrainConfig, vocabulary: &Vocabulary) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            train: train.clone(),
            vocabulary: vocabulary.clone(),
            parameters: model
                .params
                .params()
                .iter()
                .map(|p| StoredParameter {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        Ok(ck)
    }

    /// Rebuilds the model and installs the stored values.
    pub fn restore(&self, embeddings: Option<PrecomputedEmbeddings>) -> Result<A2Net, CheckpointError> {
        let mut model = A2Net::new(self.model.clone(), self.vocabulary.clone(), embeddings, 0)?;
        if model.config != self.model {
            return Err(CheckpointError::Mismatch(format!(
                "embedding width {} does not match the checkpoint's {}",
                model.config.embed_dim, self.model.embed_dim
            )));
        }
        let mut stored: BTreeMap<&str, &StoredParameter> = BTreeMap::new();
        for p in &self.parameters {
            if stored.insert(p.name.as_str(), p).is_some() {
                return Err(CheckpointError::Mismatch(format!("duplicate parameter `{}`", p.name)));
            }
        }
        for p in model.params.params_mut() {
            let s = stored
                .remove(p.name.as_str())
                .ok_or_else(|| CheckpointError::Mismatch(format!("missing parameter `{}`", p.name)))?;
            if s.shape != p.value.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    p.name,
                    s.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(s.shape.clone(), s.values.clone())
                .ok_or_else(|| CheckpointError::Mismatch(format!("`{}` has the wrong number of values", p.name)))?;
        }
        if let Some(extra) = stored.keys().next() {
            return Err(CheckpointError::Mismatch(format!("unexpected parameter `{extra}`")));
        }
        Ok(model)
    }
}
