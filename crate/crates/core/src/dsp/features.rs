use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mel::{dct_ii_matrix, mel_spectrogram, time_mean, MelConfig};
use super::stft::StftConfig;
use super::DspError;
use crate::audio::{resample, AudioClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureKind {
    /// Time-averaged dB mel spectrogram; one value per mel band.
    #[default]
    LogMelMean,
    /// Time-averaged MFCCs.
    MfccMean { n_coeffs: usize },
}

/// Everything that determines a feature vector. Training and inference must
/// share one of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub analysis_rate_hz: u32,
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub kind: FeatureKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            analysis_rate_hz: 22_050,
            stft: StftConfig::default(),
            mel: MelConfig::new(259),
            kind: FeatureKind::LogMelMean,
        }
    }
}

impl PipelineConfig {
    pub fn feature_length(&self) -> usize {
        match self.kind {
            FeatureKind::LogMelMean => self.mel.n_mels,
            FeatureKind::MfccMean { n_coeffs } => n_coeffs,
        }
    }

    /// Shortest clip (in samples at the analysis rate) that yields a frame.
    pub fn min_samples(&self) -> usize {
        self.stft.n_fft
    }

    /// Stable short hash of the serialized configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("pipeline config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), DspError> {
        self.stft.validate()?;
        if let FeatureKind::MfccMean { n_coeffs } = self.kind {
            if n_coeffs == 0 || n_coeffs > self.mel.n_mels {
                return Err(DspError::TooManyCoefficients { n_coeffs, n_mels: self.mel.n_mels });
            }
        }
        Ok(())
    }
}

/// Fixed-length, finite model input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Option<Self> {
        (!values.is_empty() && values.iter().all(|v| v.is_finite())).then_some(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Resamples to the analysis rate, then averages the dB mel spectrogram (or
/// its MFCCs) over time.
pub fn feature_vector(clip: &AudioClip, cfg: &PipelineConfig) -> Result<FeatureVector, DspError> {
    cfg.validate()?;
    let clip = resample(clip, cfg.analysis_rate_hz)?;
    if clip.len() < cfg.min_samples() {
        return Err(DspError::ClipTooShort { len: clip.len(), n_fft: cfg.stft.n_fft });
    }
    let log_mel = mel_spectrogram(&clip, cfg.stft, cfg.mel)?.to_db();
    let values = match cfg.kind {
        FeatureKind::LogMelMean => time_mean(&log_mel.energies),
        FeatureKind::MfccMean { n_coeffs } => {
            time_mean(&dct_ii_matrix(n_coeffs, cfg.mel.n_mels).dot(&log_mel.energies))
        }
    };
    let values: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
    FeatureVector::new(values).ok_or_else(|| DspError::InvalidMelConfig("non-finite feature".into()))
}

/// Writes a matrix as row-major CSV with 9 significant digits.
pub fn write_matrix_csv<W: Write>(mut out: W, m: &Array2<f64>) -> Result<(), DspError> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
