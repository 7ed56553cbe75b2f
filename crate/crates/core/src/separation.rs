//! Repeating-pattern vocal isolation with similarity-based frame grouping.
//!
//! Each STFT frame's background is modelled as the element-wise median of the
//! frames most similar to it (cosine similarity of magnitude columns). The
//! model is clipped to the mixture, turned into a Wiener-style soft mask, and
//! both channels are resynthesized with the mixture phase.

use ndarray::{Array2, ArrayView1, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp::{istft_samples, stft, DspError, Spectrogram, StftConfig};

#[derive(Debug, Error)]
pub enum SeparationError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid separation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Denominator guard in the soft mask.
pub const MASK_EPSILON: f64 = 1e-12;

/// Above this many frames the similarity matrix is never materialized.
const DENSE_SIMILARITY_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    pub stft: StftConfig,
    pub k_neighbors: usize,
    pub min_frame_gap: usize,
    pub similarity_floor: f64,
    pub wiener_power: f64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig { n_fft: 2048, hop: 256, ..StftConfig::default() },
            k_neighbors: 100,
            min_frame_gap: 1,
            similarity_floor: 0.0,
            wiener_power: 2.0,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<(), SeparationError> {
        self.stft.validate()?;
        if self.k_neighbors == 0 {
            return Err(SeparationError::InvalidConfig("k_neighbors must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.similarity_floor) {
            return Err(SeparationError::InvalidConfig("similarity_floor must lie in [0, 1]".into()));
        }
        if !(self.wiener_power.is_finite() && self.wiener_power > 0.0) {
            return Err(SeparationError::InvalidConfig("wiener_power must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub foreground: AudioClip,
    pub background: AudioClip,
    /// Background mask, bins × frames, entries in `[0, 1]`.
    pub mask: Array2<f64>,
}

fn unit_columns(mag: &Array2<f64>) -> Array2<f64> {
    let mut out = mag.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Cosine similarity between magnitude columns, `frames × frames`.
///
/// Zero columns have similarity 0 with every other frame and 1 with
/// themselves.
pub fn similarity_matrix(mag: &Array2<f64>) -> Result<Array2<f64>, SeparationError> {
    let frames = mag.ncols();
    if frames < 2 {
        return Err(SeparationError::TooFewFrames(frames));
    }
    let unit = unit_columns(mag);
    let mut sim = unit.t().dot(&unit);
    for i in 0..frames {
        sim[(i, i)] = 1.0;
        for j in i + 1..frames {
            let v = sim[(i, j)].clamp(-1.0, 1.0);
            sim[(i, j)] = v;
            sim[(j, i)] = v;
        }
    }
    Ok(sim)
}

/// Frames contributing to the model of frame `j`: `j` itself plus the most
/// similar eligible frames, `k` in total. Ties go to the lower index.
fn select_neighbors(sim_row: ArrayView1<f64>, j: usize, cfg: &SeparationConfig) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..sim_row.len())
        .filter(|&i| i != j && i.abs_diff(j) > cfg.min_frame_gap && sim_row[i] >= cfg.similarity_floor)
        .collect();
    candidates.sort_by(|&a, &b| sim_row[b].total_cmp(&sim_row[a]).then(a.cmp(&b)));
    candidates.truncate(cfg.k_neighbors.saturating_sub(1));
    let mut selected = Vec::with_capacity(candidates.len() + 1);
    selected.push(j);
    selected.extend(candidates);
    selected
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median of the selected magnitude columns, clipped to the mixture column.
fn model_column(mag: &Array2<f64>, j: usize, selected: &[usize]) -> Vec<f64> {
    let mut scratch = vec![0.0; selected.len()];
    (0..mag.nrows())
        .map(|bin| {
            for (s, &i) in scratch.iter_mut().zip(selected) {
                *s = mag[(bin, i)];
            }
            median_in_place(&mut scratch).min(mag[(bin, j)])
        })
        .collect()
}

fn assemble(columns: Vec<Vec<f64>>, bins: usize) -> Array2<f64> {
    let frames = columns.len();
    let mut out = Array2::zeros((bins, frames));
    for (j, col) in columns.into_iter().enumerate() {
        out.column_mut(j).assign(&ArrayView1::from(&col));
    }
    out
}

/// Repeating (background) magnitude model; never exceeds `mag`.
pub fn repeating_model(
    mag: &Array2<f64>,
    sim: &Array2<f64>,
    cfg: &SeparationConfig,
) -> Result<Array2<f64>, SeparationError> {
    cfg.validate()?;
    let frames = mag.ncols();
    if frames < 2 {
        return Err(SeparationError::TooFewFrames(frames));
    }
    if sim.dim() != (frames, frames) {
        return Err(SeparationError::Shape(format!(
            "similarity is {:?}, expected ({frames}, {frames})",
            sim.dim()
        )));
    }
    let columns: Vec<Vec<f64>> = (0..frames)
        .into_par_iter()
        .map(|j| model_column(mag, j, &select_neighbors(sim.row(j), j, cfg)))
        .collect();
    Ok(assemble(columns, mag.nrows()))
}

/// Same result as `repeating_model(mag, similarity_matrix(mag)?, cfg)`, but
/// computes similarity rows in blocks so memory stays linear in frames.
pub fn repeating_model_blockwise(mag: &Array2<f64>, cfg: &SeparationConfig) -> Result<Array2<f64>, SeparationError> {
    cfg.validate()?;
    let frames = mag.ncols();
    if frames < 2 {
        return Err(SeparationError::TooFewFrames(frames));
    }
    let unit = unit_columns(mag);
    const BLOCK: usize = 256;
    let mut columns = Vec::with_capacity(frames);
    for start in (0..frames).step_by(BLOCK) {
        let end = (start + BLOCK).min(frames);
        let rows = unit.slice(ndarray::s![.., start..end]).t().dot(&unit);
        let block: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|j| {
                let mut row = rows.row(j - start).to_owned();
                row.mapv_inplace(|v| v.clamp(-1.0, 1.0));
                row[j] = 1.0;
                model_column(mag, j, &select_neighbors(row.view(), j, cfg))
            })
            .collect();
        columns.extend(block);
    }
    Ok(assemble(columns, mag.nrows()))
}

/// `model^p / (model^p + (mag - model)^p + ε)`.
pub fn wiener_soft_mask(model: &Array2<f64>, mag: &Array2<f64>, power: f64) -> Result<Array2<f64>, SeparationError> {
    if model.dim() != mag.dim() {
        return Err(SeparationError::Shape(format!("model {:?} vs mixture {:?}", model.dim(), mag.dim())));
    }
    let mut mask = Array2::zeros(mag.dim());
    Zip::from(&mut mask).and(model).and(mag).for_each(|m, &bg, &mix| {
        let bg = bg.max(0.0);
        let fg = (mix - bg).max(0.0);
        let b = bg.powf(power);
        *m = (b / (b + fg.powf(power) + MASK_EPSILON)).clamp(0.0, 1.0);
    });
    Ok(mask)
}

fn resynthesize(spec: &Spectrogram, mask: &Array2<f64>, len: usize) -> Result<Vec<f64>, SeparationError> {
    let mut masked = spec.clone();
    Zip::from(&mut masked.bins).and(mask).for_each(|c, &m| *c *= m);
    let mut samples = istft_samples(&masked)?;
    samples.resize(len, 0.0);
    Ok(samples)
}

/// Splits a mixture into foreground (voice) and background (accompaniment).
/// Both outputs have the input's length and sample rate.
pub fn separate_vocals(clip: &AudioClip, cfg: &SeparationConfig) -> Result<SeparationResult, SeparationError> {
    cfg.validate()?;
    let frames = cfg.stft.n_frames(clip.len());
    if frames < 2 {
        return Err(SeparationError::TooFewFrames(frames));
    }
    let spec = stft(clip, cfg.stft)?;
    let mag = spec.magnitude();
    let model = if frames <= DENSE_SIMILARITY_LIMIT {
        repeating_model(&mag, &similarity_matrix(&mag)?, cfg)?
    } else {
        repeating_model_blockwise(&mag, cfg)?
    };
    let mask = wiener_soft_mask(&model, &mag, cfg.wiener_power)?;
    let background = resynthesize(&spec, &mask, clip.len())?;
    let foreground = resynthesize(&spec, &mask.mapv(|m| 1.0 - m), clip.len())?;
    let rate = clip.sample_rate_hz();
    Ok(SeparationResult {
        foreground: AudioClip::from_clamped(foreground, rate).map_err(DspError::from)?,
        background: AudioClip::from_clamped(background, rate).map_err(DspError::from)?,
        mask,
    })
}
