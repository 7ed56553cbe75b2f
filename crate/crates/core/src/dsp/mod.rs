//! Spectral analysis: FFT, STFT/ISTFT, power cepstrum, mel filterbanks,
//! MFCCs and the fixed-length feature vector fed to the classifier.

mod features;
mod fft;
mod mel;
mod stft;

use thiserror::Error;

use crate::audio::AudioError;

pub use features::{feature_vector, write_matrix_csv, FeatureKind, FeatureVector, PipelineConfig};
pub use fft::{fft, ifft_in_place, power_cepstrum, CEPSTRUM_FLOOR};
pub use mel::{
    dct_ii_matrix, mel_center_frequencies, mel_filterbank, mel_scale, mel_spectrogram, mel_to_hz,
    mfcc, MelConfig, MelSpectrogram, LOG_FLOOR,
};
pub use stft::{hann_window, istft, istft_samples, stft, Spectrogram, StftConfig, Window};

pub use rustfft::num_complex::Complex64;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("FFT size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("frame of {frame} samples does not fit an FFT of size {n}")]
    FrameTooLong { frame: usize, n: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidStftConfig(String),
    #[error("clip of {len} samples is shorter than one {n_fft}-sample frame")]
    ClipTooShort { len: usize, n_fft: usize },
    #[error("window/hop combination does not satisfy overlap-add: n_fft {n_fft}, hop {hop}")]
    NonCola { n_fft: usize, hop: usize },
    #[error("negative frequency {0} Hz")]
    NegativeFrequency(f64),
    #[error("invalid mel configuration: {0}")]
    InvalidMelConfig(String),
    #[error("requested {n_coeffs} coefficients from only {n_mels} mel bands")]
    TooManyCoefficients { n_coeffs: usize, n_mels: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("CSV output failed: {0}")]
    Io(#[from] std::io::Error),
}
