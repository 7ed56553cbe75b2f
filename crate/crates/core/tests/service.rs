use std::path::Path;

use vocemo_core::audio::{read_wav, write_wav, AudioClip, CaptureSource};
use vocemo_core::nn::default_model;
use vocemo_core::service::{
    predict_segments, run_realtime, Analyzer, RealtimeConfig, SegmentOutcome, SegmentReport, ServiceError,
    StreamMessage,
};

fn analyzer() -> Analyzer {
    Analyzer::from_model(default_model(17)).unwrap()
}

/// A sung-like test signal: a vibrato tone whose pitch and loudness wander.
fn melody(seconds: f64, rate: u32) -> AudioClip {
    let n = (seconds * f64::from(rate)) as usize;
    let mut phase = 0.0f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(rate);
            let f = 220.0 * (1.0 + 0.5 * (0.3 * t).sin()) + 6.0 * (2.0 * std::f64::consts::PI * 5.5 * t).sin();
            phase += 2.0 * std::f64::consts::PI * f / f64::from(rate);
            let amp = 0.3 + 0.2 * (0.7 * t).sin();
            (amp * (phase.sin() + 0.3 * (2.0 * phase).sin())) as f32
        })
        .collect();
    AudioClip::new(samples, rate).unwrap()
}

fn stage(dir: &Path, name: &str, clip: &AudioClip) -> (std::path::PathBuf, AudioClip) {
    let path = dir.join(name);
    write_wav(clip, &path).unwrap();
    let stored = read_wav(&path).unwrap();
    (path, stored)
}

fn collect(analyzer: &Analyzer, source: &CaptureSource, cfg: &RealtimeConfig) -> (Vec<StreamMessage>, Result<vocemo_core::service::SessionLog, ServiceError>) {
    let mut msgs = Vec::new();
    let res = run_realtime(analyzer, source, cfg, &mut |m| msgs.push(m.clone()));
    (msgs, res)
}

#[test]
fn realtime_replay_matches_offline_segments() {
    let dir = tempfile::tempdir().unwrap();
    let a = analyzer();
    for (rate, seconds, block) in [(22_050u32, 10.05, 0.1), (44_100, 9.05, 0.37), (16_000, 7.0, 1.0)] {
        let (path, stored) = stage(dir.path(), &format!("m{rate}.wav"), &melody(seconds, rate));
        let offline = predict_segments(&a, &stored, 3.0, false, "m").unwrap();
        let cfg = RealtimeConfig { window_s: 3.0, ..Default::default() };
        let (msgs, log) = collect(&a, &CaptureSource::file_replay(&path).with_block_seconds(block), &cfg);
        let log = log.unwrap();
        assert_eq!(log.events.len(), offline.rows.len(), "rate {rate}");
        for (ev, row) in log.events.iter().zip(&offline.rows) {
            assert_eq!(ev.outcome(), row.outcome, "rate {rate} offset {}", row.offset_s);
            assert!((ev.t - row.offset_s).abs() < 1e-9);
        }
        assert_eq!(msgs.last(), Some(&StreamMessage::End { events: log.events.len() as u64 }));
        let seqs: Vec<u64> = log.events.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    }
}

#[test]
fn short_tail_is_marked_in_both_paths() {
    let dir = tempfile::tempdir().unwrap();
    let a = analyzer();
    let (path, stored) = stage(dir.path(), "tail.wav", &melody(6.05, 22_050));
    let offline = predict_segments(&a, &stored, 3.0, false, "tail").unwrap();
    assert_eq!(offline.rows.len(), 3);
    assert_eq!(offline.rows[2].outcome, SegmentOutcome::TooShort);
    let (_, log) = collect(&a, &CaptureSource::file_replay(&path), &RealtimeConfig::default());
    assert_eq!(log.unwrap().events[2].outcome(), SegmentOutcome::TooShort);
}

#[test]
fn isolated_replay_matches_isolated_offline() {
    let dir = tempfile::tempdir().unwrap();
    let a = analyzer();
    let (path, stored) = stage(dir.path(), "iso.wav", &melody(5.0, 22_050));
    let offline = predict_segments(&a, &stored, 2.5, true, "iso").unwrap();
    let plain = predict_segments(&a, &stored, 2.5, false, "iso").unwrap();
    let offsets = |r: &SegmentReport| r.rows.iter().map(|x| x.offset_s).collect::<Vec<_>>();
    assert_eq!(offsets(&offline), offsets(&plain));
    let cfg = RealtimeConfig { window_s: 2.5, isolate: true, ..Default::default() };
    let (_, log) = collect(&a, &CaptureSource::file_replay(&path), &cfg);
    let report = log.unwrap().to_report("iso", 2.5, true);
    assert_eq!(report, offline);
}

#[test]
fn silence_stream_yields_normalized_events() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = stage(dir.path(), "quiet.wav", &AudioClip::silence(22_050 * 7, 22_050));
    let cfg = RealtimeConfig { window_s: 1.0, include_features: true, ..Default::default() };
    let (_, log) = collect(&analyzer(), &CaptureSource::file_replay(&path), &cfg);
    let log = log.unwrap();
    assert_eq!(log.events.len(), 7);
    for ev in &log.events {
        let probs = ev.probs.unwrap();
        assert!(probs.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!((probs.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        assert!(ev.mel_frame.as_ref().unwrap().iter().all(|&v| v == -100.0));
    }
}

#[test]
fn session_log_is_persisted_as_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = stage(dir.path(), "m.wav", &melody(4.0, 22_050));
    let log_path = dir.path().join("session.jsonl");
    let cfg = RealtimeConfig { window_s: 2.0, session_log: Some(log_path.clone()), ..Default::default() };
    let (msgs, _) = collect(&analyzer(), &CaptureSource::file_replay(&path), &cfg);
    let text = std::fs::read_to_string(&log_path).unwrap();
    let parsed: Vec<StreamMessage> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, msgs);
    assert_eq!(parsed.len(), 3);
}

#[test]
fn failures_end_with_error_message() {
    let a = analyzer();
    let (msgs, res) = collect(&a, &CaptureSource::device("default"), &RealtimeConfig::default());
    assert!(matches!(res, Err(ServiceError::Capture(_))));
    assert!(matches!(msgs.as_slice(), [StreamMessage::Error { .. }]));

    let (msgs, res) = collect(&a, &CaptureSource::file_replay("/nonexistent.wav"), &RealtimeConfig::default());
    assert!(res.is_err());
    assert_eq!(msgs.len(), 1);

    let tiny = RealtimeConfig { window_s: 0.05, ..Default::default() };
    let (msgs, res) = collect(&a, &CaptureSource::file_replay("/nonexistent.wav"), &tiny);
    assert!(matches!(res, Err(ServiceError::Config(_))));
    assert!(matches!(msgs.as_slice(), [StreamMessage::Error { .. }]));
}

#[test]
fn report_shape_and_csv_roundtrip() {
    let a = analyzer();
    // 204 s at a low rate keeps this fast; the analyzer resamples each segment.
    let clip = AudioClip::from_clamped(
        (0..204 * 8_000).map(|i| 0.2 * ((i as f64) * 0.07).sin()),
        8_000,
    )
    .unwrap();
    let report = predict_segments(&a, &clip, 20.0, false, "long").unwrap();
    let offsets: Vec<f64> = report.rows.iter().map(|r| r.offset_s).collect();
    assert_eq!(offsets, (0..11).map(|i| f64::from(i) * 20.0).collect::<Vec<_>>());

    let csv = report.to_csv_string();
    assert!(csv.starts_with("offset_s,label,p_neutral,p_calm,p_happy,p_sad,p_angry,p_fearful\n"));
    let back = SegmentReport::read_csv(csv.as_bytes(), "long", 20.0, false).unwrap();
    assert_eq!(back, report);

    let single = predict_segments(&a, &melody(2.0, 22_050), 30.0, false, "s").unwrap();
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.rows[0].offset_s, 0.0);
}

#[test]
fn too_short_rows_roundtrip_through_csv() {
    let a = analyzer();
    let report = predict_segments(&a, &melody(3.02, 22_050), 1.0, false, "x").unwrap();
    assert_eq!(report.rows.last().unwrap().outcome, SegmentOutcome::TooShort);
    let csv = report.to_csv_string();
    assert!(csv.lines().last().unwrap().starts_with("3,too_short,,,,,,"));
    assert_eq!(SegmentReport::read_csv(csv.as_bytes(), "x", 1.0, false).unwrap(), report);
}

#[test]
fn analyzer_rejects_mismatched_pipeline() {
    let model: vocemo_core::nn::Model<f32> = default_model(0);
    let cfg = vocemo_core::dsp::PipelineConfig {
        kind: vocemo_core::dsp::FeatureKind::MfccMean { n_coeffs: 40 },
        ..Default::default()
    };
    assert!(matches!(Analyzer::new(model, cfg), Err(ServiceError::FeatureMismatch { model: 259, pipeline: 40 })));
}

/// A live source that produces blocks as fast as it is polled.
struct FloodingMic {
    blocks_left: usize,
    block: usize,
}

impl vocemo_core::audio::CaptureStream for FloodingMic {
    fn sample_rate_hz(&self) -> u32 {
        22_050
    }

    fn next_block(&mut self) -> Result<Vec<f32>, vocemo_core::audio::CaptureError> {
        if self.blocks_left == 0 {
            return Ok(Vec::new());
        }
        self.blocks_left -= 1;
        Ok((0..self.block).map(|i| 0.1 * ((i as f32) * 0.05).sin()).collect())
    }

    fn block_len(&self) -> usize {
        self.block
    }

    fn is_live(&self) -> bool {
        true
    }
}

#[test]
fn live_overrun_is_reported_and_accounted() {
    let a = analyzer();
    let block = 2_205;
    let blocks = 300;
    let cfg = RealtimeConfig { window_s: 0.5, queue_blocks: 1, ..Default::default() };
    let mut msgs = Vec::new();
    let log = vocemo_core::service::run_realtime_stream(
        &a,
        Box::new(FloodingMic { blocks_left: blocks, block }),
        &cfg,
        &mut |m| msgs.push(m.clone()),
    )
    .unwrap();
    let seqs: Vec<u64> = log.events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    assert!(log.events.windows(2).all(|w| w[1].t > w[0].t));
    let gaps: f64 = msgs
        .iter()
        .filter_map(|m| match m {
            StreamMessage::Gap { dropped_audio_s, .. } => Some(*dropped_audio_s),
            _ => None,
        })
        .sum();
    assert!((gaps - log.dropped_audio_s).abs() < 1e-9);
    assert!(log.dropped_audio_s <= (blocks * block) as f64 / 22_050.0);
    assert!(matches!(msgs.last(), Some(StreamMessage::End { .. })));
}
