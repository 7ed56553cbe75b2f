//! One-dimensional CNN classifier over feature vectors.

mod io;
mod layers;
mod metrics;
mod model;
mod train;

use thiserror::Error;

pub use io::{decode_model, encode_model, load_model, save_model, ModelIoError, FORMAT_VERSION, MAGIC};
pub use layers::{Activation, LayerSpec, Scalar, Shape};
pub use metrics::{confusion_matrix, evaluate, ConfusionMatrix, Evaluation};
pub use model::{
    build_model, cross_entropy, default_architecture, predict, shape_chain, ForwardPass, Gradients, LayerSummary,
    Mode, ModeKind, Model, Params, Prediction, DEFAULT_DROPOUT, DEFAULT_INPUT_LENGTH,
};
pub use train::{train, train_with_hook, AdamConfig, EpochStats, LabeledData, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: {reason}")]
    ShapeChain { layer: usize, reason: String },
    #[error("expected length {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} outside 0..{n_classes}")]
    InvalidLabel { label: usize, n_classes: usize },
}

/// The default classifier: 259 inputs, six classes, 0.2 dropout.
pub fn default_model(seed: u64) -> Model<f32> {
    build_model(DEFAULT_INPUT_LENGTH, crate::dataset::EmotionLabel::COUNT, &default_architecture(DEFAULT_DROPOUT), seed)
        .expect("default architecture chains")
}

#[cfg(test)]
mod tests;
