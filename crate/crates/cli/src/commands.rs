use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use vocemo_core::audio::{capture, multiple_split, read_wav, resample, write_wav, AudioClip, CaptureSource};
use vocemo_core::dataset::{build_dataset, split_train_test, BuildOptions, IngestReport};
use vocemo_core::dsp::{mel_spectrogram, write_matrix_csv, PipelineConfig};
use vocemo_core::nn::{
    build_model, default_architecture, evaluate, load_model, train as train_model, ConfusionMatrix, LabeledData,
    TrainConfig, TrainReport, DEFAULT_DROPOUT,
};
use vocemo_core::separation::{separate_vocals, SeparationConfig};
use vocemo_core::service::{predict_segments, Analyzer, SegmentReport};
use vocemo_core::EmotionLabel;

use crate::CliError;

pub const MODEL_FILE: &str = "model.vmod";
pub const CURVES_FILE: &str = "training_curves.csv";
pub const CONFUSION_FILE: &str = "confusion_matrix.csv";

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(format!("cannot create {}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(CliError::io(format!("cannot create directory {}", path.display())))
}

fn positive_seconds(what: &str, s: f64) -> Result<(), CliError> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} must be a positive number of seconds, got {s}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSummary {
    pub bands: usize,
    pub frames: usize,
    pub waveform_points: usize,
    /// Band with the highest mean level.
    pub loudest_band: usize,
    pub waveform_csv: PathBuf,
    pub spectrogram_csv: PathBuf,
    pub spectrogram_png: PathBuf,
}

/// Writes a min/max-downsampled waveform and the dB mel spectrogram (as a
/// CSV grid and a grayscale image, low bands at the bottom) of `path`.
pub fn demo(path: &Path, out_dir: &Path, max_points: usize) -> Result<DemoSummary, CliError> {
    let clip = read_wav(path)?;
    create_dir(out_dir)?;
    let cfg = PipelineConfig::default();

    let bucket = clip.len().div_ceil(max_points.max(1)).max(1);
    let waveform_csv = out_dir.join("waveform.csv");
    let points = write_waveform(create(&waveform_csv)?, &clip, bucket).map_err(CliError::io("cannot write waveform"))?;

    let analysis = resample(&clip, cfg.analysis_rate_hz)?;
    let db = mel_spectrogram(&analysis, cfg.stft, cfg.mel)?.to_db().energies;
    let spectrogram_csv = out_dir.join("mel_spectrogram_db.csv");
    write_matrix_csv(create(&spectrogram_csv)?, &db)?;

    let (bands, frames) = db.dim();
    let img = image::GrayImage::from_fn(frames as u32, bands as u32, |x, y| {
        let v = db[(bands - 1 - y as usize, x as usize)];
        image::Luma([(((v + 100.0) / 100.0).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let spectrogram_png = out_dir.join("mel_spectrogram_db.png");
    img.save(&spectrogram_png)?;

    let means: Vec<f64> = db.rows().into_iter().map(|r| r.mean().unwrap_or(f64::NEG_INFINITY)).collect();
    let loudest_band = (0..bands).fold(0, |best, i| if means[i] > means[best] { i } else { best });
    Ok(DemoSummary { bands, frames, waveform_points: points, loudest_band, waveform_csv, spectrogram_csv, spectrogram_png })
}

/// One `time_s,min,max` row per bucket of samples.
fn write_waveform<W: Write>(mut w: W, clip: &AudioClip, bucket: usize) -> std::io::Result<usize> {
    let rate = f64::from(clip.sample_rate_hz());
    writeln!(w, "time_s,min,max")?;
    let mut rows = 0;
    for (i, chunk) in clip.samples().chunks(bucket).enumerate() {
        let lo = chunk.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = chunk.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        writeln!(w, "{},{lo},{hi}", (i * bucket) as f64 / rate)?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub include_speech: bool,
    pub use_cache: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub pipeline: PipelineConfig,
}

impl TrainOptions {
    pub fn new(dataset_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, epochs: usize, seed: u64) -> Self {
        let defaults = TrainConfig::default();
        Self {
            dataset_dir: dataset_dir.into(),
            out_dir: out_dir.into(),
            epochs,
            seed,
            test_fraction: 0.25,
            include_speech: false,
            use_cache: true,
            batch_size: defaults.batch_size,
            learning_rate: defaults.adam.learning_rate,
            dropout: DEFAULT_DROPOUT,
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub ingest: IngestReport,
    pub train_size: usize,
    pub test_size: usize,
    pub report: TrainReport,
    /// Of the best checkpoint, on the test split.
    pub confusion: ConfusionMatrix,
    pub model_path: PathBuf,
    pub curves_path: PathBuf,
    pub confusion_path: PathBuf,
}

/// Ingests the dataset, trains with best-checkpoint saving, and writes the
/// curves and the best model's test confusion matrix next to the model.
pub fn train(opts: &TrainOptions) -> Result<TrainOutcome, CliError> {
    if opts.epochs == 0 {
        return Err(CliError::Usage("epochs must be positive".into()));
    }
    let (dataset, ingest) = build_dataset(
        &opts.dataset_dir,
        &opts.pipeline,
        BuildOptions { include_speech: opts.include_speech, use_cache: opts.use_cache },
    )?;
    log::info!("loaded {} clips ({} wav files seen)", ingest.loaded, ingest.wav_files_seen);
    let (train_ds, test_ds) = split_train_test(&dataset, opts.test_fraction, opts.seed)?;
    let train_set = LabeledData::from(&train_ds);
    let test_set = LabeledData::from(&test_ds);

    let mut model = build_model::<f32>(
        opts.pipeline.feature_length(),
        EmotionLabel::COUNT,
        &default_architecture(opts.dropout),
        opts.seed,
    )?;
    model.metadata.insert("pipeline".into(), serde_json::to_value(opts.pipeline).expect("config serializes"));
    model.metadata.insert("seed".into(), opts.seed.into());

    create_dir(&opts.out_dir)?;
    let model_path = opts.out_dir.join(MODEL_FILE);
    let mut cfg = TrainConfig { epochs: opts.epochs, batch_size: opts.batch_size, seed: opts.seed, ..Default::default() };
    cfg.adam.learning_rate = opts.learning_rate;
    let report = train_model(&mut model, &train_set, &test_set, &cfg, Some(&model_path))?;

    let curves_path = opts.out_dir.join(CURVES_FILE);
    report.write_csv(create(&curves_path)?).map_err(|e| CliError::Usage(format!("writing curves: {e}")))?;

    let best = load_model(&model_path)?;
    let eval = evaluate(&best, test_set.features.view(), &test_set.labels)?;
    let confusion = eval.confusion(&test_set.labels)?;
    let confusion_path = opts.out_dir.join(CONFUSION_FILE);
    confusion.write_csv(create(&confusion_path)?).map_err(CliError::io("cannot write confusion matrix"))?;

    Ok(TrainOutcome {
        ingest,
        train_size: train_set.len(),
        test_size: test_set.len(),
        report,
        confusion,
        model_path,
        curves_path,
        confusion_path,
    })
}

fn wav_files(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input).map_err(CliError::io(format!("cannot read {}", input.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Classifies every WAV file in `input` (a folder or a single file) in
/// segments of `segment_s` seconds. Unreadable files are skipped with a
/// warning. With `out_dir`, each report is written as `<stem>.csv`.
pub fn predict(
    input: &Path,
    model_path: &Path,
    segment_s: f64,
    isolate: bool,
    out_dir: Option<&Path>,
) -> Result<Vec<SegmentReport>, CliError> {
    positive_seconds("segment length", segment_s)?;
    let analyzer = Analyzer::load(model_path)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
    }
    let mut reports = Vec::new();
    for path in wav_files(input)? {
        let clip = match read_wav(&path) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let report = predict_segments(&analyzer, &clip, segment_s, isolate, &name)?;
        if let Some(dir) = out_dir {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            report.write_csv(create(&dir.join(format!("{stem}.csv")))?)?;
        }
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolateOutputs {
    pub foreground: PathBuf,
    pub background: PathBuf,
    pub mask: Option<PathBuf>,
}

/// Writes `<prefix>.foreground.wav`, `<prefix>.background.wav` and, if asked,
/// the background mask as `<prefix>.mask.csv` (bins × frames).
pub fn isolate(path: &Path, out_prefix: &Path, write_mask: bool, cfg: &SeparationConfig) -> Result<IsolateOutputs, CliError> {
    let clip = read_wav(path)?;
    let result = separate_vocals(&clip, cfg)?;
    let with_suffix = |suffix: &str| {
        let mut s = out_prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    if let Some(parent) = out_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let out = IsolateOutputs {
        foreground: with_suffix(".foreground.wav"),
        background: with_suffix(".background.wav"),
        mask: write_mask.then(|| with_suffix(".mask.csv")),
    };
    write_wav(&result.foreground, &out.foreground)?;
    write_wav(&result.background, &out.background)?;
    if let Some(mask_path) = &out.mask {
        write_matrix_csv(create(mask_path)?, &result.mask)?;
    }
    Ok(out)
}

/// Cuts `path` into `<stem>_000.wav`, `<stem>_001.wav`, ... of `segment_s`
/// seconds each; the last one holds the remainder.
pub fn split(path: &Path, segment_s: f64, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    positive_seconds("segment length", segment_s)?;
    let clip = read_wav(path)?;
    let segments = multiple_split(&clip, segment_s)?;
    create_dir(out_dir)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "segment".into());
    let width = segments.len().saturating_sub(1).to_string().len().max(3);
    segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let p = out_dir.join(format!("{stem}_{i:0width$}.wav"));
            write_wav(seg, &p)?;
            Ok(p)
        })
        .collect()
}

/// Captures exactly `seconds` of audio from `source` into a WAV file.
pub fn record(seconds: f64, out_path: &Path, source: &CaptureSource) -> Result<AudioClip, CliError> {
    positive_seconds("recording length", seconds)?;
    let clip = capture(source, seconds)?;
    write_wav(&clip, out_path)?;
    Ok(clip)
}
