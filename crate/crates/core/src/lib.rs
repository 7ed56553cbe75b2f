//! Emotion recognition for sung audio: WAV handling, spectral features,
//! repeating-pattern vocal isolation, RAVDESS ingestion, a 1-D CNN
//! classifier, and the shared offline/live analysis path.

pub mod audio;
pub mod dataset;
pub mod dsp;
pub mod nn;
pub mod separation;
pub mod service;

pub use audio::{AudioClip, AudioError, CaptureSource};
pub use dataset::{Dataset, EmotionLabel};
pub use dsp::{FeatureVector, PipelineConfig};
pub use nn::{Model, Prediction, TrainReport};
pub use separation::SeparationConfig;
pub use service::{Analyzer, PredictionEvent, SegmentOutcome, SegmentReport, StreamMessage};
