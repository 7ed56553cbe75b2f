use std::path::Path;
use std::sync::Arc;

use super::ServiceError;
use crate::audio::{resample, AudioClip};
use crate::dsp::{feature_vector, FeatureVector, PipelineConfig};
use crate::nn::{load_model, predict, Model, Prediction};
use crate::separation::{separate_vocals, SeparationConfig};

/// Result of classifying one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentOutcome {
    Predicted(Prediction),
    /// Too few samples for a single analysis frame; no label is assigned.
    TooShort,
}

impl SegmentOutcome {
    pub fn prediction(&self) -> Option<&Prediction> {
        match self {
            SegmentOutcome::Predicted(p) => Some(p),
            SegmentOutcome::TooShort => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub outcome: SegmentOutcome,
    /// The model input, when one was computed.
    pub features: Option<FeatureVector>,
}

/// A loaded model plus the exact feature pipeline it was trained with.
/// Offline reports and live sessions both classify through [`Analyzer::analyze`].
#[derive(Debug, Clone)]
pub struct Analyzer {
    model: Arc<Model<f32>>,
    pipeline: PipelineConfig,
    separation: SeparationConfig,
}

impl Analyzer {
    pub fn new(model: Model<f32>, pipeline: PipelineConfig) -> Result<Self, ServiceError> {
        pipeline.validate()?;
        if model.input_length() != pipeline.feature_length() {
            return Err(ServiceError::FeatureMismatch {
                model: model.input_length(),
                pipeline: pipeline.feature_length(),
            });
        }
        Ok(Self { model: Arc::new(model), pipeline, separation: SeparationConfig::default() })
    }

    /// Uses the pipeline recorded in the model's metadata, or the default one.
    pub fn from_model(model: Model<f32>) -> Result<Self, ServiceError> {
        let pipeline = match model.metadata.get("pipeline") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| ServiceError::Config(format!("model pipeline metadata: {e}")))?,
            None => PipelineConfig::default(),
        };
        Self::new(model, pipeline)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        Self::from_model(load_model(path)?)
    }

    pub fn with_separation(mut self, cfg: SeparationConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        self.separation = cfg;
        Ok(self)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn pipeline(&self) -> &PipelineConfig {
        &self.pipeline
    }

    /// Shortest segment, in samples at the analysis rate, that gets a label.
    pub fn min_samples(&self, isolate: bool) -> usize {
        let base = self.pipeline.min_samples();
        if isolate {
            // Separation needs two STFT frames.
            base.max(self.separation.stft.n_fft + self.separation.stft.hop)
        } else {
            base
        }
    }

    /// Resamples to the analysis rate, optionally isolates the voice, then
    /// extracts features and predicts.
    pub fn analyze(&self, segment: &AudioClip, isolate: bool) -> Result<Analysis, ServiceError> {
        let clip = resample(segment, self.pipeline.analysis_rate_hz)?;
        if clip.len() < self.min_samples(isolate) {
            return Ok(Analysis { outcome: SegmentOutcome::TooShort, features: None });
        }
        let clip = if isolate { separate_vocals(&clip, &self.separation)?.foreground } else { clip };
        let features = feature_vector(&clip, &self.pipeline)?;
        let prediction = predict(&self.model, &features)?;
        Ok(Analysis { outcome: SegmentOutcome::Predicted(prediction), features: Some(features) })
    }

    pub fn classify(&self, segment: &AudioClip, isolate: bool) -> Result<SegmentOutcome, ServiceError> {
        Ok(self.analyze(segment, isolate)?.outcome)
    }
}
