use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),
    #[error("sequence of length {len} exceeds the maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary size {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("empty source sequence")]
    EmptySource,
    #[error("source sequence contains only padding")]
    AllPadSource,
    #[error("decoder input must begin with <BOS>")]
    MissingBos,
    #[error("target has no non-padding positions")]
    EmptyTarget,
    #[error("logits cover {logits} positions but the target has {target}")]
    LengthMismatch { logits: usize, target: usize },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("step {step} outside 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("{path}: not a checkpoint file")]
    BadMagic { path: PathBuf },
    #[error("{path}: checkpoint version {found}, expected {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated or corrupted checkpoint ({detail})")]
    Corrupt { path: PathBuf, detail: String },
    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, supplied {supplied}")]
    VocabMismatch { checkpoint: String, supplied: String },
    #[error("checkpoint dtype {found}, expected {expected}")]
    Dtype { found: String, expected: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] ketod_core::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

impl ModelError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.into(),
            source,
        }
    }
}
