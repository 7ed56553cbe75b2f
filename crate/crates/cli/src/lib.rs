//! Batch commands and the live prediction server behind the `vocemo` binary.

pub mod commands;
pub mod server;

use thiserror::Error;
use vocemo_core::audio::{AudioError, CaptureError};
use vocemo_core::dataset::DatasetError;
use vocemo_core::dsp::DspError;
use vocemo_core::nn::{ModelIoError, NnError, TrainError};
use vocemo_core::separation::SeparationError;
use vocemo_core::service::ServiceError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("cannot load model: {0}")]
    ModelFile(#[from] ModelIoError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}
