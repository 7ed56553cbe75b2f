use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::fft::{fft_in_place, ifft_in_place};
use super::{Complex64, DspError};
use crate::audio::AudioClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: Window,
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self, DspError> {
        let cfg = Self { n_fft, hop, window: Window::Hann };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(DspError::InvalidStftConfig(format!("n_fft {} is not a power of two", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft || !self.n_fft.is_multiple_of(self.hop) {
            return Err(DspError::InvalidStftConfig(format!(
                "hop {} must divide n_fft {}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// `floor((len - n_fft) / hop) + 1`, or zero when the clip is too short.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { n_fft: 2048, hop: 512, window: Window::Hann }
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided complex STFT, `n_fft/2 + 1` rows by `n_frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array2<Complex64>,
    pub config: StftConfig,
    pub source_rate_hz: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.bins.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }

    pub fn power(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm_sqr())
    }
}

/// Frame `t` covers samples `[t·hop, t·hop + n_fft)`; no padding is applied.
pub fn stft(clip: &AudioClip, cfg: StftConfig) -> Result<Spectrogram, DspError> {
    cfg.validate()?;
    let samples = clip.samples();
    let n_frames = cfg.n_frames(samples.len());
    if n_frames == 0 {
        return Err(DspError::ClipTooShort { len: samples.len(), n_fft: cfg.n_fft });
    }
    let window = hann_window(cfg.n_fft);
    let n_bins = cfg.n_bins();
    let mut bins = Array2::zeros((n_bins, n_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    for t in 0..n_frames {
        let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex64::new(f64::from(x) * w, 0.0);
        }
        fft_in_place(&mut buf);
        for (k, &c) in buf[..n_bins].iter().enumerate() {
            bins[(k, t)] = c;
        }
    }
    Ok(Spectrogram { bins, config: cfg, source_rate_hz: clip.sample_rate_hz() })
}

/// Weighted overlap-add resynthesis in double precision. Output length is
/// `(n_frames - 1)·hop + n_fft`; samples with no window coverage are zero.
pub fn istft_samples(spec: &Spectrogram) -> Result<Vec<f64>, DspError> {
    let cfg = spec.config;
    cfg.validate()?;
    // Hann windows need at least 2x overlap for the squared-window sum to stay positive.
    if cfg.n_fft / cfg.hop < 2 {
        return Err(DspError::NonCola { n_fft: cfg.n_fft, hop: cfg.hop });
    }
    if spec.bins.nrows() != cfg.n_bins() {
        return Err(DspError::InvalidStftConfig(format!(
            "spectrogram has {} rows, expected {}",
            spec.bins.nrows(),
            cfg.n_bins()
        )));
    }
    let n_frames = spec.n_frames();
    if n_frames == 0 {
        return Ok(Vec::new());
    }
    let n = cfg.n_fft;
    let window = hann_window(n);
    let out_len = (n_frames - 1) * cfg.hop + n;
    let mut out = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..n_frames {
        let col = spec.bins.column(t);
        for k in 0..=n / 2 {
            buf[k] = col[k];
        }
        for k in 1..n / 2 {
            buf[n - k] = col[k].conj();
        }
        ifft_in_place(&mut buf);
        let start = t * cfg.hop;
        for i in 0..n {
            out[start + i] += buf[i].re * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, &w) in out.iter_mut().zip(&norm) {
        *o = if w > 1e-10 { *o / w } else { 0.0 };
    }
    Ok(out)
}

/// Inverse STFT, clamped into a normalized clip.
pub fn istft(spec: &Spectrogram) -> Result<AudioClip, DspError> {
    let samples = istft_samples(spec)?;
    Ok(AudioClip::from_clamped(samples, spec.source_rate_hz)?)
}
