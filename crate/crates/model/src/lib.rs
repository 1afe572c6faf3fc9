//! Transformer encoder-decoder response generator trained from scratch.
//!
//! - [`params`]: named parameter tensors, initialization, parameter counts
//! - [`transformer`]: forward pass, teacher-forced loss, exact gradients
//! - [`generate`]: greedy decoding with a key/value cache
//! - [`train`]: Adam, learning-rate schedule, best-checkpoint selection
//! - [`checkpoint`]: versioned binary checkpoints
//! - [`data`]: token pairs to id examples, validation scoring

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod generate;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod train;
pub mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ModelConfig, Preset};
pub use error::{ModelError, Result};
pub use generate::greedy_generate;
pub use params::{Grads, Params};
pub use scalar::Scalar;
pub use train::{fit, lr_at, Budget, FitOutcome, TrainConfig};
pub use transformer::{forward, gradients, nll_loss, teacher_forcing, Example, Logits};
