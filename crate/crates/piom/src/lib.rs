//! Interaction optimization network: point-cloud tokens of hand and object,
//! cross-attention between them, pose/geometry attention within each frame,
//! a temporal transformer across frames, and per-frame pose corrections.
//!
//! Gradients come from a small reverse-mode tape (`tape`), so training needs
//! no external deep-learning runtime.

use thiserror::Error;

pub mod config;
pub mod model;
pub mod params;
pub mod tape;
pub mod train;

pub use config::PiomConfig;
pub use model::{canonical_reference, positional_encoding, Piom, PreparedInput, Recording};
pub use params::{PiomParams, TensorRecord};
pub use tape::Mat;
pub use train::{
    train, AdamState, Checkpoint, EpochRecord, Stage, TrainConfig, TrainItem, TrainReport, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum PiomError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("clip of {frames} frames exceeds the maximum of {max}")]
    TooLong { frames: usize, max: usize },
    #[error("{what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Loss(#[from] trajopt_core::losses::LossError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("fine-tuning needs a pretrained checkpoint")]
    MissingCheckpoint,
    #[error("non-finite {0} during training")]
    NonFinite(&'static str),
}
