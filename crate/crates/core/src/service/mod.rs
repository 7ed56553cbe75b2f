//! Shared analysis path for offline reports and live sessions.

mod analyzer;
mod broadcast;
mod event;
mod realtime;
mod report;

use thiserror::Error;

pub use analyzer::{Analysis, Analyzer, SegmentOutcome};
pub use broadcast::{Broadcaster, Received, Subscription};
pub use event::{PredictionEvent, StreamMessage, SCHEMA_VERSION};
pub use realtime::{run_realtime, run_realtime_stream, RealtimeConfig, SessionLog};
pub use report::{predict_segments, SegmentReport, SegmentRow, CSV_HEADER};

use crate::audio::{AudioError, CaptureError};
use crate::dsp::DspError;
use crate::nn::{ModelIoError, NnError};
use crate::separation::SeparationError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    ModelFile(#[from] ModelIoError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("capture failed: {0}")]
    CaptureFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("model expects {model} inputs but the feature pipeline produces {pipeline}")]
    FeatureMismatch { model: usize, pipeline: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed report: {0}")]
    Report(String),
}
