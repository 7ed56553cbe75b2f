//! WAV ingestion and export, mono mixdown, resampling, splitting, and
//! capture sources.
//!
//! Everything downstream consumes [`AudioClip`]: mono `f32` samples in
//! `[-1, 1]` tagged with a sample rate.

use std::io;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("{path}: not a RIFF/WAVE file ({reason})")]
    NotWav { path: PathBuf, reason: String },
    #[error("{path}: unsupported WAV encoding ({detail})")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("clip is empty")]
    EmptyClip,
    #[error("sample rate must be positive")]
    InvalidSampleRate,
    #[error("sample {index} is not finite or outside [-1, 1]: {value}")]
    InvalidSample { index: usize, value: f32 },
    #[error("invalid split range [{from_s}, {to_s}) for a clip of {duration_s} s")]
    InvalidRange { from_s: f64, to_s: f64, duration_s: f64 },
    #[error("segment length must be positive and at least one sample, got {0} s")]
    InvalidSegmentLength(f64),
    #[error("resample target {0} Hz is below the 1000 Hz minimum")]
    InvalidTargetRate(u32),
}

/// Mono PCM audio normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    /// Validates that every sample is finite and within `[-1, 1]`.
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidSampleRate);
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(AudioError::InvalidSample { index, value });
        }
        Ok(Self { samples, sample_rate_hz })
    }

    /// Builds a clip from arbitrary values, clamping into `[-1, 1]` and
    /// replacing non-finite values with silence.
    pub fn from_clamped<I>(values: I, sample_rate_hz: u32) -> Result<Self, AudioError>
    where
        I: IntoIterator,
        I::Item: Into<f64>,
    {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidSampleRate);
        }
        let samples = values
            .into_iter()
            .map(|v| {
                let v: f64 = v.into();
                if v.is_finite() {
                    v.clamp(-1.0, 1.0) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        Self { samples: vec![0.0; len], sample_rate_hz }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        get_duration(self)
    }

    /// Sum of squared samples, accumulated in double precision.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum()
    }
}

/// Number of whole samples covering `seconds` at `rate` (floored).
pub fn seconds_to_samples(seconds: f64, rate: u32) -> usize {
    (seconds * f64::from(rate)).floor().max(0.0) as usize
}

/// Decodes a PCM16, PCM24 or float32 WAV file, mixing stereo down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::NotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels != 1 && channels != 2 {
        return Err(AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{channels} channels"),
        });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32_768.0))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Int, 24) => reader
            .into_samples::<i32>()
            .map(|s| s.map(|v| (f64::from(v) / 8_388_608.0) as f32))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 }))
            .collect::<Result<_, _>>(),
        (format, bits) => {
            return Err(AudioError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{format:?} {bits}-bit"),
            })
        }
    }
    .map_err(|e| map_hound_error(path, e))?;

    let samples = if channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|pair| ((f64::from(pair[0]) + f64::from(pair[1])) * 0.5) as f32)
            .collect()
    } else {
        interleaved
    };
    AudioClip::new(samples, spec.sample_rate)
}

fn map_hound_error(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(source) => AudioError::Io { path: path.to_path_buf(), source },
        hound::Error::FormatError(reason) => {
            AudioError::NotWav { path: path.to_path_buf(), reason: reason.to_string() }
        }
        hound::Error::Unsupported => AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "codec not supported".into(),
        },
        other => AudioError::UnsupportedFormat { path: path.to_path_buf(), detail: other.to_string() },
    }
}

/// Quantizes a normalized sample to PCM16 using the same 32768 scale as
/// [`read_wav`].
fn quantize_pcm16(sample: f32) -> i16 {
    (f64::from(sample) * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16
}

/// Writes a mono PCM16 WAV.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    if clip.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_error(path, e))?;
    {
        let mut w = writer.get_i16_writer(clip.samples.len() as u32);
        for &s in &clip.samples {
            w.write_sample(quantize_pcm16(s));
        }
        w.flush().map_err(|e| map_hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound_error(path, e))
}

/// Zero crossings of the sinc kernel kept on each side.
const SINC_ZERO_CROSSINGS: f64 = 16.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The kernel for every fractional phase is normalized to unit DC gain, so a
/// constant signal stays constant away from the edges. Output length is
/// `round(len · target / source)`.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip, AudioError> {
    if target_hz < 1000 {
        return Err(AudioError::InvalidTargetRate(target_hz));
    }
    let source_hz = clip.sample_rate_hz;
    if source_hz == target_hz {
        return Ok(clip.clone());
    }
    let g = gcd(u64::from(source_hz), u64::from(target_hz));
    let up = u64::from(target_hz) / g;
    let down = u64::from(source_hz) / g;
    let n_in = clip.samples.len();
    let n_out = ((n_in as u128 * up as u128 + (down as u128) / 2) / down as u128) as usize;

    let cutoff = (target_hz as f64 / source_hz as f64).min(1.0);
    let half_width = (SINC_ZERO_CROSSINGS / cutoff).ceil() as i64;
    let taps = (2 * half_width) as usize;

    let kernel = |offset: f64| -> f64 {
        let x = offset;
        let w = x / (half_width as f64 + 1.0);
        if w.abs() >= 1.0 {
            return 0.0;
        }
        let window = 0.5 * (1.0 + (std::f64::consts::PI * w).cos());
        let arg = std::f64::consts::PI * cutoff * x;
        let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
        cutoff * sinc * window
    };

    // Taps for fractional phase p/up: input indices base - half_width + 1 ..= base + half_width.
    let phase_taps = |phase: u64| -> Vec<f64> {
        let frac = phase as f64 / up as f64;
        let mut t: Vec<f64> = (0..taps)
            .map(|i| {
                let idx = i as i64 - half_width + 1;
                kernel(idx as f64 - frac)
            })
            .collect();
        let sum: f64 = t.iter().sum();
        if sum.abs() > 0.0 {
            t.iter_mut().for_each(|v| *v /= sum);
        }
        t
    };

    let table: Option<Vec<Vec<f64>>> = (up <= 2048).then(|| (0..up).map(phase_taps).collect());

    let input = &clip.samples;
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out as u64 {
        let pos = i as u128 * down as u128;
        let base = (pos / up as u128) as i64;
        let phase = (pos % up as u128) as u64;
        let owned;
        let weights: &[f64] = match &table {
            Some(t) => &t[phase as usize],
            None => {
                owned = phase_taps(phase);
                &owned
            }
        };
        let start = base - half_width + 1;
        let mut acc = 0.0f64;
        for (k, &w) in weights.iter().enumerate() {
            let idx = start + k as i64;
            if idx >= 0 && (idx as usize) < n_in {
                acc += w * f64::from(input[idx as usize]);
            }
        }
        out.push(acc);
    }
    AudioClip::from_clamped(out, target_hz)
}

/// Duration in seconds: `len / rate`.
pub fn get_duration(clip: &AudioClip) -> f64 {
    clip.samples.len() as f64 / f64::from(clip.sample_rate_hz)
}

/// Extracts samples `[floor(from·rate), min(floor(to·rate), len))`.
pub fn single_split(clip: &AudioClip, from_s: f64, to_s: f64) -> Result<AudioClip, AudioError> {
    let duration_s = get_duration(clip);
    let bad = || AudioError::InvalidRange { from_s, to_s, duration_s };
    if !(from_s.is_finite() && to_s.is_finite()) || from_s < 0.0 || from_s >= to_s || from_s >= duration_s {
        return Err(bad());
    }
    let start = seconds_to_samples(from_s, clip.sample_rate_hz);
    let end = seconds_to_samples(to_s, clip.sample_rate_hz).min(clip.samples.len());
    if start >= end {
        return Err(bad());
    }
    Ok(AudioClip { samples: clip.samples[start..end].to_vec(), sample_rate_hz: clip.sample_rate_hz })
}

/// Tiles the clip into consecutive segments of `floor(segment_s·rate)`
/// samples; the final segment keeps whatever remains.
pub fn multiple_split(clip: &AudioClip, segment_s: f64) -> Result<Vec<AudioClip>, AudioError> {
    if !segment_s.is_finite() || segment_s <= 0.0 {
        return Err(AudioError::InvalidSegmentLength(segment_s));
    }
    let seg = seconds_to_samples(segment_s, clip.sample_rate_hz);
    if seg == 0 {
        return Err(AudioError::InvalidSegmentLength(segment_s));
    }
    Ok(clip
        .samples
        .chunks(seg)
        .map(|c| AudioClip { samples: c.to_vec(), sample_rate_hz: clip.sample_rate_hz })
        .collect())
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("capture device unavailable: {0}")]
    DeviceUnavailable(String),
    #[error("replay exhausted: requested {requested} samples, only {available} remained")]
    ReplayExhausted { requested: usize, available: usize },
    #[error("capture length must be positive, got {0} s")]
    InvalidDuration(f64),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureKind {
    Device,
    FileReplay,
}

/// Describes where live audio comes from.
///
/// `FileReplay` plays a WAV file back block by block and is bit-exact across
/// replays. `Device` names a system input; this build links no audio backend,
/// so opening one reports [`CaptureError::DeviceUnavailable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSource {
    pub kind: CaptureKind,
    pub identifier: String,
    pub block_seconds: f64,
    /// Replay only: sleep so blocks arrive at wall-clock rate.
    #[serde(default)]
    pub paced: bool,
}

impl CaptureSource {
    pub fn file_replay(path: impl AsRef<Path>) -> Self {
        Self {
            kind: CaptureKind::FileReplay,
            identifier: path.as_ref().to_string_lossy().into_owned(),
            block_seconds: 0.1,
            paced: false,
        }
    }

    pub fn device(name: impl Into<String>) -> Self {
        Self { kind: CaptureKind::Device, identifier: name.into(), block_seconds: 0.1, paced: false }
    }

    pub fn with_block_seconds(mut self, block_seconds: f64) -> Self {
        self.block_seconds = block_seconds;
        self
    }

    pub fn paced(mut self, paced: bool) -> Self {
        self.paced = paced;
        self
    }

    pub fn open(&self) -> Result<Box<dyn CaptureStream>, CaptureError> {
        if !(self.block_seconds.is_finite() && self.block_seconds > 0.0) {
            return Err(CaptureError::InvalidDuration(self.block_seconds));
        }
        match self.kind {
            CaptureKind::FileReplay => {
                let clip = read_wav(&self.identifier)?;
                let block = seconds_to_samples(self.block_seconds, clip.sample_rate_hz).max(1);
                Ok(Box::new(ReplayStream { clip, cursor: 0, block, paced: self.paced, started: None }))
            }
            CaptureKind::Device => Err(CaptureError::DeviceUnavailable(format!(
                "{}: no audio input backend is compiled into this build",
                self.identifier
            ))),
        }
    }
}

/// A source of mono sample blocks.
pub trait CaptureStream: Send {
    fn sample_rate_hz(&self) -> u32;

    /// Returns the next block (at most `block_len()` samples). An empty
    /// block means the source is exhausted.
    fn next_block(&mut self) -> Result<Vec<f32>, CaptureError>;

    fn block_len(&self) -> usize;

    /// Live sources cannot be paused; consumers must never block them.
    fn is_live(&self) -> bool;
}

struct ReplayStream {
    clip: AudioClip,
    cursor: usize,
    block: usize,
    paced: bool,
    started: Option<Instant>,
}

impl CaptureStream for ReplayStream {
    fn sample_rate_hz(&self) -> u32 {
        self.clip.sample_rate_hz
    }

    fn next_block(&mut self) -> Result<Vec<f32>, CaptureError> {
        let end = (self.cursor + self.block).min(self.clip.samples.len());
        let out = self.clip.samples[self.cursor..end].to_vec();
        self.cursor = end;
        if self.paced {
            let started = *self.started.get_or_insert_with(Instant::now);
            let due = Duration::from_secs_f64(end as f64 / f64::from(self.clip.sample_rate_hz));
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                thread::sleep(wait);
            }
        }
        Ok(out)
    }

    fn block_len(&self) -> usize {
        self.block
    }

    fn is_live(&self) -> bool {
        false
    }
}

/// Records exactly `seconds` of audio from a fresh stream of `source`.
pub fn capture(source: &CaptureSource, seconds: f64) -> Result<AudioClip, CaptureError> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(CaptureError::InvalidDuration(seconds));
    }
    let mut stream = source.open()?;
    let rate = stream.sample_rate_hz();
    let wanted = seconds_to_samples(seconds, rate);
    if wanted == 0 {
        return Err(CaptureError::InvalidDuration(seconds));
    }
    let mut samples = Vec::with_capacity(wanted);
    while samples.len() < wanted {
        let block = stream.next_block()?;
        if block.is_empty() {
            return Err(CaptureError::ReplayExhausted { requested: wanted, available: samples.len() });
        }
        let take = (wanted - samples.len()).min(block.len());
        samples.extend_from_slice(&block[..take]);
    }
    Ok(AudioClip::new(samples, rate)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(len: usize, rate: u32) -> AudioClip {
        AudioClip::new((0..len).map(|i| ((i % 200) as f32 / 100.0) - 1.0).collect(), rate).unwrap()
    }

    #[test]
    fn silence_roundtrip_through_wav() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        write_wav(&AudioClip::silence(16_000, 16_000), &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate_hz(), 16_000);
        assert_eq!(back.len(), 16_000);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_minimum_maps_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("min.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(i16::MIN).unwrap();
        w.write_sample(i16::MAX).unwrap();
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples()[0], -1.0);
        assert_eq!(clip.samples()[1], 32_767.0 / 32_768.0);
    }

    #[test]
    fn stereo_is_averaged_and_pcm24_float_are_read() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(4_194_304i32).unwrap(); // 0.5
            w.write_sample(0i32).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&stereo).unwrap();
        assert_eq!(clip.len(), 4);
        assert!(clip.samples().iter().all(|&s| (s - 0.25).abs() < 1e-7));

        let float = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&float, spec).unwrap();
        w.write_sample(0.125f32).unwrap();
        w.write_sample(-0.75f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&float).unwrap().samples(), &[0.125, -0.75]);
    }

    #[test]
    fn read_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_wav(dir.path().join("nope.wav")), Err(AudioError::NotFound(_))));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"this is not a riff container at all").unwrap();
        assert!(matches!(read_wav(&junk), Err(AudioError::NotWav { .. })));

        let pcm8 = dir.path().join("pcm8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&pcm8, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&pcm8), Err(AudioError::UnsupportedFormat { .. })));
    }

    #[test]
    fn write_rejects_empty_clip() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_wav(&AudioClip::silence(0, 8000), dir.path().join("e.wav")).unwrap_err();
        assert!(matches!(err, AudioError::EmptyClip));
    }

    #[test]
    fn full_scale_sine_roundtrip_within_one_step() {
        let rate = 48_000;
        let samples: Vec<f32> = (0..rate)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate as f64).sin() as f32)
            .collect();
        let clip = AudioClip::new(samples, rate).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        write_wav(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        let max_err = clip
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 32_768.0, "max error {max_err}");
    }

    #[test]
    fn durations() {
        assert_eq!(get_duration(&AudioClip::silence(16_000, 16_000)), 1.0);
        assert_eq!(get_duration(&AudioClip::silence(0, 16_000)), 0.0);
        assert_eq!(get_duration(&AudioClip::silence(441_000, 44_100)), 10.0);
    }

    #[test]
    fn resample_identity_and_duration() {
        let clip = ramp(48_000, 48_000);
        assert_eq!(resample(&clip, 48_000).unwrap(), clip);
        let down = resample(&clip, 22_050).unwrap();
        assert_eq!(down.sample_rate_hz(), 22_050);
        assert!((down.duration_seconds() - clip.duration_seconds()).abs() <= 1.0 / 22_050.0);
        assert!(matches!(resample(&clip, 999), Err(AudioError::InvalidTargetRate(999))));
    }

    #[test]
    fn resample_preserves_dc() {
        let clip = AudioClip::new(vec![0.5; 48_000], 48_000).unwrap();
        for target in [22_050, 16_000, 44_100, 96_000] {
            let out = resample(&clip, target).unwrap();
            let edge = (target / 100) as usize;
            let interior = &out.samples()[edge..out.len() - edge];
            let dev = interior.iter().map(|&s| (s - 0.5).abs()).fold(0.0f32, f32::max);
            assert!(dev < 0.01, "target {target}: deviation {dev}");
        }
    }

    #[test]
    fn single_split_cases() {
        let clip = AudioClip::silence(160_000, 16_000);
        assert_eq!(single_split(&clip, 0.0, 10.0).unwrap(), clip);
        assert_eq!(single_split(&clip, 2.0, 5.0).unwrap().len(), 48_000);
        assert_eq!(single_split(&clip, 9.0, 15.0).unwrap().len(), 16_000);
        assert!(single_split(&clip, 5.0, 2.0).is_err());
        assert!(single_split(&clip, -1.0, 2.0).is_err());
        assert!(single_split(&clip, 10.0, 12.0).is_err());
    }

    #[test]
    fn multiple_split_cases() {
        let clip = AudioClip::silence(160_000, 16_000);
        let parts = multiple_split(&clip, 5.0).unwrap();
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.len() == 80_000));

        let long = AudioClip::silence(204 * 8000, 8000);
        let parts = multiple_split(&long, 20.0).unwrap();
        assert_eq!(parts.len(), 11);
        assert_eq!(parts.last().unwrap().duration_seconds(), 4.0);

        assert!(multiple_split(&clip, 0.0).is_err());
        assert!(multiple_split(&clip, -3.0).is_err());
    }

    proptest! {
        #[test]
        fn split_concatenation_is_identity(len in 0usize..5000, rate in 100u32..4000, seg in 0.01f64..3.0) {
            let clip = ramp(len, rate);
            prop_assume!(seconds_to_samples(seg, rate) > 0);
            let parts = multiple_split(&clip, seg).unwrap();
            let seg_len = seconds_to_samples(seg, rate);
            for p in parts.iter().take(parts.len().saturating_sub(1)) {
                prop_assert_eq!(p.len(), seg_len);
            }
            let total: usize = parts.iter().map(AudioClip::len).sum();
            prop_assert_eq!(total, clip.len());
            let joined: Vec<f32> = parts.iter().flat_map(|p| p.samples().iter().copied()).collect();
            prop_assert_eq!(joined.as_slice(), clip.samples());
        }

        #[test]
        fn pcm16_quantization_is_monotone(a in -1.0f32..=1.0, b in -1.0f32..=1.0) {
            if a <= b {
                prop_assert!(quantize_pcm16(a) <= quantize_pcm16(b));
            }
        }
    }

    #[test]
    fn replay_capture_is_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let clip = ramp(3 * 8000, 8000);
        write_wav(&clip, &path).unwrap();
        let reference = read_wav(&path).unwrap();
        let source = CaptureSource::file_replay(&path).with_block_seconds(0.3);
        let a = capture(&source, 2.0).unwrap();
        let b = capture(&source, 2.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples(), &reference.samples()[..16_000]);
        assert!(matches!(capture(&source, 4.0), Err(CaptureError::ReplayExhausted { .. })));
        assert!(matches!(capture(&source, 0.0), Err(CaptureError::InvalidDuration(_))));
    }

    #[test]
    fn device_capture_reports_unavailable() {
        let err = capture(&CaptureSource::device("default"), 1.0).unwrap_err();
        assert!(matches!(err, CaptureError::DeviceUnavailable(_)));
    }
}
