//! RAVDESS ingestion: filename metadata, the six-class label space, feature
//! extraction with an on-disk cache, and stratified train/test splits.
//!
//! RAVDESS names every file with seven dash-separated two-digit fields:
//! `modality-channel-emotion-intensity-statement-repetition-actor.wav`, e.g.
//! `03-02-06-01-02-01-12.wav` is audio-only, song, fearful, normal intensity,
//! statement 2, first repetition, actor 12.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::audio::read_wav;
use crate::dsp::{feature_vector, FeatureVector, PipelineConfig};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed RAVDESS file name {0:?}")]
    MalformedName(String),
    #[error("unknown emotion code {0:02} in {1:?}")]
    UnknownEmotionCode(u8, String),
    #[error("field {field} = {value} out of range in {name:?}")]
    FieldOutOfRange { field: &'static str, value: u8, name: String },
    #[error("no RAVDESS audio files found under {0}")]
    EmptyDirectory(PathBuf),
    #[error("all {0} candidate files failed to load")]
    AllFilesFailed(usize),
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("dataset is empty")]
    Empty,
    #[error("feature length mismatch: expected {expected}, found {found}")]
    FeatureLength { expected: usize, found: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// The six emotions the classifier distinguishes, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Neutral,
    Calm,
    Happy,
    Sad,
    Angry,
    Fearful,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Neutral,
        EmotionLabel::Calm,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Angry,
        EmotionLabel::Fearful,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Calm => "calm",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Angry => "angry",
            EmotionLabel::Fearful => "fearful",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown emotion label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocalChannel {
    Speech,
    Song,
}

/// Fields decoded from a RAVDESS file name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMetadata {
    /// 1 = audio-video, 2 = video-only, 3 = audio-only.
    pub modality: u8,
    pub vocal_channel: VocalChannel,
    /// 1..=8; 7 (disgust) and 8 (surprised) have no model class.
    pub emotion_code: u8,
    /// 1 = normal, 2 = strong.
    pub intensity: u8,
    pub statement: u8,
    pub repetition: u8,
    /// 1..=24; odd actors are male, even female.
    pub actor_id: u8,
}

impl ClipMetadata {
    pub fn label(&self) -> Option<EmotionLabel> {
        match self.emotion_code {
            1..=6 => EmotionLabel::from_index(usize::from(self.emotion_code) - 1),
            _ => None,
        }
    }

    /// Reconstructs the seven-field stem, e.g. `03-02-06-01-02-01-12`.
    pub fn file_stem(&self) -> String {
        let channel = match self.vocal_channel {
            VocalChannel::Speech => 1,
            VocalChannel::Song => 2,
        };
        format!(
            "{:02}-{:02}-{:02}-{:02}-{:02}-{:02}-{:02}",
            self.modality, channel, self.emotion_code, self.intensity, self.statement, self.repetition, self.actor_id
        )
    }
}

/// Parses a RAVDESS base name such as `03-02-06-01-02-01-12.wav`.
pub fn parse_ravdess_name(filename: &str) -> Result<ClipMetadata, DatasetError> {
    let base = Path::new(filename)
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| DatasetError::MalformedName(filename.to_string()))?;
    let malformed = || DatasetError::MalformedName(filename.to_string());
    let stem = base
        .strip_suffix(".wav")
        .or_else(|| base.strip_suffix(".WAV"))
        .ok_or_else(malformed)?;
    let fields: Vec<u8> = stem
        .split('-')
        .map(|f| {
            if f.len() == 2 && f.bytes().all(|b| b.is_ascii_digit()) {
                f.parse::<u8>().map_err(|_| malformed())
            } else {
                Err(malformed())
            }
        })
        .collect::<Result<_, _>>()?;
    if fields.len() != 7 {
        return Err(malformed());
    }
    let check = |field: &'static str, value: u8, range: std::ops::RangeInclusive<u8>| {
        if range.contains(&value) {
            Ok(value)
        } else {
            Err(DatasetError::FieldOutOfRange { field, value, name: filename.to_string() })
        }
    };
    let vocal_channel = match fields[1] {
        1 => VocalChannel::Speech,
        2 => VocalChannel::Song,
        v => return Err(DatasetError::FieldOutOfRange { field: "vocal_channel", value: v, name: filename.to_string() }),
    };
    if !(1..=8).contains(&fields[2]) {
        return Err(DatasetError::UnknownEmotionCode(fields[2], filename.to_string()));
    }
    Ok(ClipMetadata {
        modality: check("modality", fields[0], 1..=3)?,
        vocal_channel,
        emotion_code: fields[2],
        intensity: check("intensity", fields[3], 1..=2)?,
        statement: check("statement", fields[4], 1..=2)?,
        repetition: check("repetition", fields[5], 1..=2)?,
        actor_id: check("actor_id", fields[6], 1..=24)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub features: FeatureVector,
    pub label: EmotionLabel,
    pub meta: ClipMetadata,
    /// Path relative to the dataset root.
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<DatasetItem>,
    feature_length: usize,
}

impl Dataset {
    pub fn new(items: Vec<DatasetItem>, feature_length: usize) -> Result<Self, DatasetError> {
        if let Some(bad) = items.iter().find(|i| i.features.len() != feature_length) {
            return Err(DatasetError::FeatureLength { expected: feature_length, found: bad.features.len() });
        }
        Ok(Self { items, feature_length })
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_length(&self) -> usize {
        self.feature_length
    }

    pub fn class_counts(&self) -> [usize; EmotionLabel::COUNT] {
        let mut counts = [0; EmotionLabel::COUNT];
        for item in &self.items {
            counts[item.label.index()] += 1;
        }
        counts
    }

    /// `len × feature_length` matrix of features.
    pub fn feature_matrix(&self) -> Array2<f32> {
        let mut m = Array2::zeros((self.items.len(), self.feature_length));
        for (mut row, item) in m.rows_mut().into_iter().zip(&self.items) {
            row.assign(&ndarray::ArrayView1::from(item.features.values()));
        }
        m
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label.index()).collect()
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            feature_length: self.feature_length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub include_speech: bool,
    pub use_cache: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { include_speech: false, use_cache: true }
    }
}

/// What ingestion saw, for comparison with the expected 1,012 sung clips.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub wav_files_seen: usize,
    pub skipped_speech: usize,
    pub skipped_out_of_model: usize,
    pub skipped_unparseable: usize,
    pub failed: usize,
    pub loaded: usize,
    pub counts_per_class: BTreeMap<String, usize>,
    pub from_cache: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheManifest {
    format_version: u32,
    config_hash: String,
    pipeline: PipelineConfig,
    include_speech: bool,
    files: usize,
    counts_per_class: BTreeMap<String, usize>,
    /// Every candidate file considered, including any that failed extraction.
    candidates: Vec<String>,
}

const CACHE_DIR: &str = ".vocemo-cache";
const CACHE_FORMAT_VERSION: u32 = 1;

fn counts_map(counts: [usize; EmotionLabel::COUNT]) -> BTreeMap<String, usize> {
    EmotionLabel::ALL.iter().map(|l| (l.name().to_string(), counts[l.index()])).collect()
}

struct Candidate {
    rel: String,
    path: PathBuf,
    meta: ClipMetadata,
    label: EmotionLabel,
}

/// Walks `root` for RAVDESS WAV files, keeps the song channel (and speech if
/// asked), and extracts one feature vector per clip. Items are ordered by
/// relative path, so parallel extraction cannot change the result.
pub fn build_dataset(
    root: impl AsRef<Path>,
    cfg: &PipelineConfig,
    opts: BuildOptions,
) -> Result<(Dataset, IngestReport), DatasetError> {
    let root = root.as_ref();
    let mut report = IngestReport::default();
    let mut candidates = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| e.file_name() != CACHE_DIR) {
        let entry = entry.map_err(|e| DatasetError::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.to_ascii_lowercase().ends_with(".wav") {
            continue;
        }
        report.wav_files_seen += 1;
        let meta = match parse_ravdess_name(&name) {
            Ok(m) => m,
            Err(e) => {
                warn!("skipping {name}: {e}");
                report.skipped_unparseable += 1;
                continue;
            }
        };
        if meta.vocal_channel == VocalChannel::Speech && !opts.include_speech {
            report.skipped_speech += 1;
            continue;
        }
        let Some(label) = meta.label() else {
            report.skipped_out_of_model += 1;
            continue;
        };
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path()).to_string_lossy().replace('\\', "/");
        candidates.push(Candidate { rel, path: entry.path().to_path_buf(), meta, label });
    }
    candidates.sort_by(|a, b| a.rel.cmp(&b.rel));
    if candidates.is_empty() {
        return Err(DatasetError::EmptyDirectory(root.to_path_buf()));
    }

    let cache_dir = root.join(CACHE_DIR).join(cfg.config_hash());
    if opts.use_cache {
        match load_cache(&cache_dir, cfg, opts, &candidates) {
            Ok(Some(ds)) => {
                report.loaded = ds.len();
                report.counts_per_class = counts_map(ds.class_counts());
                report.from_cache = true;
                info!("loaded {} cached feature vectors from {}", ds.len(), cache_dir.display());
                return Ok((ds, report));
            }
            Ok(None) => {}
            Err(e) => warn!("ignoring unreadable feature cache {}: {e}", cache_dir.display()),
        }
    }

    let extracted: Vec<Option<DatasetItem>> = candidates
        .par_iter()
        .map(|c| {
            let result = read_wav(&c.path)
                .map_err(|e| e.to_string())
                .and_then(|clip| feature_vector(&clip, cfg).map_err(|e| e.to_string()));
            match result {
                Ok(features) => Some(DatasetItem { features, label: c.label, meta: c.meta, file_name: c.rel.clone() }),
                Err(e) => {
                    warn!("skipping {}: {e}", c.rel);
                    None
                }
            }
        })
        .collect();
    report.failed = extracted.iter().filter(|i| i.is_none()).count();
    let items: Vec<DatasetItem> = extracted.into_iter().flatten().collect();
    if items.is_empty() {
        return Err(DatasetError::AllFilesFailed(candidates.len()));
    }
    let ds = Dataset::new(items, cfg.feature_length())?;
    report.loaded = ds.len();
    report.counts_per_class = counts_map(ds.class_counts());
    info!("extracted {} feature vectors ({} failed); per class {:?}", ds.len(), report.failed, report.counts_per_class);

    if opts.use_cache {
        if let Err(e) = write_cache(&cache_dir, cfg, opts, &ds, &candidates) {
            warn!("could not write feature cache {}: {e}", cache_dir.display());
        }
    }
    Ok((ds, report))
}

fn write_cache(
    dir: &Path,
    cfg: &PipelineConfig,
    opts: BuildOptions,
    ds: &Dataset,
    candidates: &[Candidate],
) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
    let mut header = vec!["file".to_string(), "label".to_string()];
    header.extend((0..ds.feature_length).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for item in &ds.items {
        let mut rec = vec![item.file_name.clone(), item.label.name().to_string()];
        rec.extend(item.features.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let manifest = CacheManifest {
        format_version: CACHE_FORMAT_VERSION,
        config_hash: cfg.config_hash(),
        pipeline: *cfg,
        include_speech: opts.include_speech,
        files: ds.len(),
        counts_per_class: counts_map(ds.class_counts()),
        candidates: candidates.iter().map(|c| c.rel.clone()).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn load_cache(
    dir: &Path,
    cfg: &PipelineConfig,
    opts: BuildOptions,
    candidates: &[Candidate],
) -> Result<Option<Dataset>, DatasetError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Ok(None);
    }
    let manifest: CacheManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format_version != CACHE_FORMAT_VERSION
        || manifest.config_hash != cfg.config_hash()
        || manifest.include_speech != opts.include_speech
        || !manifest.candidates.iter().eq(candidates.iter().map(|c| &c.rel))
    {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(dir.join("features.csv"))?;
    let by_name: BTreeMap<&str, &Candidate> = candidates.iter().map(|c| (c.rel.as_str(), c)).collect();
    let mut items = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let Some(c) = rec.get(0).and_then(|n| by_name.get(n)) else {
            return Ok(None);
        };
        let values: Result<Vec<f32>, _> = rec.iter().skip(2).map(str::parse::<f32>).collect();
        let Some(features) = values.ok().and_then(FeatureVector::new) else {
            return Ok(None);
        };
        items.push(DatasetItem { features, label: c.label, meta: c.meta, file_name: c.rel.clone() });
    }
    if items.len() != manifest.files {
        return Ok(None);
    }
    Ok(Some(Dataset::new(items, cfg.feature_length())?))
}

/// Stratified, seeded split. Each class contributes `floor` or `ceil` of its
/// share to the test set; the overall test size is `round(len · fraction)`.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    if ds.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); EmotionLabel::COUNT];
    for (i, item) in ds.items.iter().enumerate() {
        per_class[item.label.index()].push(i);
    }
    let quotas: Vec<f64> = per_class.iter().map(|c| c.len() as f64 * test_fraction).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let target = (ds.len() as f64 * test_fraction).round() as usize;
    let mut remaining = target.saturating_sub(take.iter().sum());
    let mut order: Vec<usize> = (0..EmotionLabel::COUNT).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for c in order {
        if remaining == 0 {
            break;
        }
        if take[c] < per_class[c].len() && quotas[c] > quotas[c].floor() {
            take[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (class, mut members) in per_class.into_iter().enumerate() {
        members.shuffle(&mut rng);
        test_idx.extend_from_slice(&members[..take[class]]);
        train_idx.extend_from_slice(&members[take[class]..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}
