use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::stft::{stft, StftConfig};
use super::DspError;
use crate::audio::AudioClip;

/// Additive floor inside `10·log10(x + floor)`: silence maps to -100 dB.
pub const LOG_FLOOR: f64 = 1e-10;

/// Hz to mel: `2595·log10(1 + f/700)`.
pub fn mel_scale(f_hz: f64) -> Result<f64, DspError> {
    if f_hz < 0.0 || f_hz.is_nan() {
        return Err(DspError::NegativeFrequency(f_hz));
    }
    Ok(2595.0 * (1.0 + f_hz / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min_hz: f64,
    /// `None` means the Nyquist frequency of the analysed clip.
    pub f_max_hz: Option<f64>,
}

impl MelConfig {
    pub fn new(n_mels: usize) -> Self {
        Self { n_mels, f_min_hz: 0.0, f_max_hz: None }
    }

    pub fn f_max_for(&self, rate_hz: u32) -> f64 {
        self.f_max_hz.unwrap_or(f64::from(rate_hz) / 2.0)
    }
}

/// Centre frequencies (Hz) of `n_mels` filters equally spaced on the mel axis
/// between `f_min` and `f_max` (edges excluded).
pub fn mel_center_frequencies(n_mels: usize, f_min_hz: f64, f_max_hz: f64) -> Result<Vec<f64>, DspError> {
    Ok(mel_edges(n_mels, f_min_hz, f_max_hz)?[1..=n_mels].to_vec())
}

fn mel_edges(n_mels: usize, f_min_hz: f64, f_max_hz: f64) -> Result<Vec<f64>, DspError> {
    let lo = mel_scale(f_min_hz)?;
    let hi = mel_scale(f_max_hz)?;
    let step = (hi - lo) / (n_mels + 1) as f64;
    Ok((0..n_mels + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect())
}

/// Triangular filters (peak 1) over the one-sided FFT bins, shape
/// `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    rate_hz: u32,
    f_min_hz: f64,
    f_max_hz: f64,
) -> Result<Array2<f64>, DspError> {
    let nyquist = f64::from(rate_hz) / 2.0;
    let n_bins = n_fft / 2 + 1;
    if n_mels < 2 {
        return Err(DspError::InvalidMelConfig(format!("need at least 2 mel bands, got {n_mels}")));
    }
    if !(f_min_hz >= 0.0 && f_min_hz < f_max_hz) {
        return Err(DspError::InvalidMelConfig(format!("f_min {f_min_hz} must be below f_max {f_max_hz}")));
    }
    if f_max_hz > nyquist {
        return Err(DspError::InvalidMelConfig(format!("f_max {f_max_hz} exceeds Nyquist {nyquist}")));
    }
    if n_mels > n_bins {
        return Err(DspError::InvalidMelConfig(format!("{n_mels} mel bands exceed {n_bins} FFT bins")));
    }
    let edges = mel_edges(n_mels, f_min_hz, f_max_hz)?;
    let bin_hz = f64::from(rate_hz) / n_fft as f64;
    let mut bank = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            let w = rise.min(fall).max(0.0);
            if w > 0.0 {
                bank[(m, k)] = w;
                any = true;
            }
        }
        if !any {
            return Err(DspError::InvalidMelConfig(format!(
                "mel band {m} ({left:.2}-{right:.2} Hz) covers no FFT bin"
            )));
        }
    }
    Ok(bank)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `n_mels × n_frames`.
    pub energies: Array2<f64>,
    pub log_scaled: bool,
    pub mel_config: MelConfig,
}

impl MelSpectrogram {
    /// `10·log10(x + 1e-10)`; a no-op when already log-scaled.
    pub fn to_db(&self) -> MelSpectrogram {
        if self.log_scaled {
            return self.clone();
        }
        MelSpectrogram {
            energies: self.energies.mapv(|x| 10.0 * (x + LOG_FLOOR).log10()),
            log_scaled: true,
            mel_config: self.mel_config,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.energies.ncols()
    }
}

/// Mel-warped power spectrogram (linear energies).
pub fn mel_spectrogram(
    clip: &AudioClip,
    stft_cfg: StftConfig,
    mel_cfg: MelConfig,
) -> Result<MelSpectrogram, DspError> {
    let spec = stft(clip, stft_cfg)?;
    let rate = clip.sample_rate_hz();
    let bank = mel_filterbank(mel_cfg.n_mels, stft_cfg.n_fft, rate, mel_cfg.f_min_hz, mel_cfg.f_max_for(rate))?;
    let energies = bank.dot(&spec.power());
    Ok(MelSpectrogram { energies, log_scaled: false, mel_config: mel_cfg })
}

/// Orthonormal DCT-II basis, `n_out × n_in`.
pub fn dct_ii_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
    })
}

/// MFCCs: orthonormal DCT-II of the dB mel spectrogram along the band axis,
/// first `n_coeffs` rows.
pub fn mfcc(
    clip: &AudioClip,
    stft_cfg: StftConfig,
    mel_cfg: MelConfig,
    n_coeffs: usize,
) -> Result<Array2<f64>, DspError> {
    if n_coeffs == 0 || n_coeffs > mel_cfg.n_mels {
        return Err(DspError::TooManyCoefficients { n_coeffs, n_mels: mel_cfg.n_mels });
    }
    let log_mel = mel_spectrogram(clip, stft_cfg, mel_cfg)?.to_db();
    Ok(dct_ii_matrix(n_coeffs, mel_cfg.n_mels).dot(&log_mel.energies))
}

/// Mean over frames of each row.
pub(crate) fn time_mean(m: &Array2<f64>) -> Vec<f64> {
    m.mean_axis(Axis(1)).map(|a| a.to_vec()).unwrap_or_default()
}
