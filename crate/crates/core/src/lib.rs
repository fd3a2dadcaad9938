//! EdgeCNN / EdgeCNN-G: small-input CNNs for facial expression classification,
//! with CPU training, ten-crop evaluation and cost profiling.

pub mod data;
pub mod error;
pub mod kvtext;
pub mod lgc;
pub mod model;
pub mod nnops;
pub mod profile;
pub mod tensor;
pub mod train;

pub use data::{Dataset, LabeledImage, Normalization};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Variant};
pub use profile::CostReport;
pub use tensor::{Element, Precision, Shape, Tensor};
pub use train::{Checkpoint, TrainConfig, Trainer};

/// Batch-norm and kernel-selection mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
