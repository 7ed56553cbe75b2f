use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::thread;

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};

use super::analyzer::Analyzer;
use super::event::{PredictionEvent, StreamMessage};
use super::report::{SegmentReport, SegmentRow};
use super::ServiceError;
use crate::audio::{seconds_to_samples, AudioClip, CaptureSource, CaptureStream};

#[derive(Debug, Clone, PartialEq)]
pub struct RealtimeConfig {
    pub window_s: f64,
    pub isolate: bool,
    /// Attach each window's feature vector to its event as `melFrame`.
    pub include_features: bool,
    /// Capacity, in capture blocks, of the queue between capture and analysis.
    pub queue_blocks: usize,
    /// Every message is appended here as one JSON line.
    pub session_log: Option<PathBuf>,
}

impl Default for RealtimeConfig {
    fn default() -> Self {
        Self { window_s: 3.0, isolate: false, include_features: false, queue_blocks: 64, session_log: None }
    }
}

/// What a finished session produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    pub events: Vec<PredictionEvent>,
    pub dropped_audio_s: f64,
}

impl SessionLog {
    /// The session in the same shape an offline report has.
    pub fn to_report(&self, source: &str, window_s: f64, isolated: bool) -> SegmentReport {
        SegmentReport {
            source: source.to_string(),
            segment_s: window_s,
            isolated,
            rows: self.events.iter().map(|e| SegmentRow { offset_s: e.t, outcome: e.outcome() }).collect(),
        }
    }
}

enum Captured {
    Block(Vec<f32>),
    /// Samples a live source produced while the queue was full.
    Overrun(usize),
    Failed(String),
    Done,
}

fn produce(mut stream: Box<dyn CaptureStream>, tx: Sender<Captured>) {
    let live = stream.is_live();
    let mut dropped = 0usize;
    loop {
        let msg = match stream.next_block() {
            Ok(b) if b.is_empty() => Captured::Done,
            Ok(b) => Captured::Block(b),
            Err(e) => Captured::Failed(e.to_string()),
        };
        let last = !matches!(msg, Captured::Block(_));
        let delivered = if live {
            if dropped > 0 && tx.try_send(Captured::Overrun(dropped)).is_ok() {
                dropped = 0;
            }
            match tx.try_send(msg) {
                Ok(()) => true,
                Err(TrySendError::Full(Captured::Block(b))) => {
                    dropped += b.len();
                    true
                }
                // End-of-stream markers must arrive, so wait for room.
                Err(TrySendError::Full(m)) => tx.send(m).is_ok(),
                Err(TrySendError::Disconnected(_)) => false,
            }
        } else {
            tx.send(msg).is_ok()
        };
        if last || !delivered {
            return;
        }
    }
}

struct Session<'a> {
    analyzer: &'a Analyzer,
    cfg: &'a RealtimeConfig,
    sink: &'a mut dyn FnMut(&StreamMessage),
    log_file: Option<BufWriter<File>>,
    log: SessionLog,
    rate: u32,
}

impl Session<'_> {
    fn emit(&mut self, msg: StreamMessage) -> Result<(), ServiceError> {
        if let Some(f) = &mut self.log_file {
            writeln!(f, "{}", msg.to_json())?;
            f.flush()?;
        }
        (self.sink)(&msg);
        if let StreamMessage::Event(ev) = msg {
            self.log.events.push(ev);
        }
        Ok(())
    }

    fn analyze_window(&mut self, samples: Vec<f32>, start_sample: usize) -> Result<(), ServiceError> {
        let clip = AudioClip::new(samples, self.rate)?;
        let analysis = self.analyzer.analyze(&clip, self.cfg.isolate)?;
        let seq = self.log.events.len() as u64;
        let t = start_sample as f64 / f64::from(self.rate);
        let mut ev = PredictionEvent::new(seq, t, self.cfg.window_s, analysis.outcome);
        if self.cfg.include_features {
            ev.mel_frame = analysis.features.map(|f| f.values().to_vec());
        }
        self.emit(StreamMessage::Event(ev))
    }

    /// Cuts back-to-back windows out of the captured audio. A trailing
    /// partial window is analysed when the source ends, exactly as the
    /// offline splitter would.
    fn consume(&mut self, rx: Receiver<Captured>) -> Result<(), ServiceError> {
        let window = seconds_to_samples(self.cfg.window_s, self.rate);
        let mut buf: Vec<f32> = Vec::with_capacity(window);
        let mut buf_start = 0usize;
        loop {
            let msg = rx.recv().unwrap_or(Captured::Failed("capture thread stopped unexpectedly".into()));
            match msg {
                Captured::Block(block) => {
                    let mut rest = block.as_slice();
                    while !rest.is_empty() {
                        let take = (window - buf.len()).min(rest.len());
                        buf.extend_from_slice(&rest[..take]);
                        rest = &rest[take..];
                        if buf.len() == window {
                            let full = std::mem::replace(&mut buf, Vec::with_capacity(window));
                            self.analyze_window(full, buf_start)?;
                            buf_start += window;
                        }
                    }
                }
                Captured::Overrun(n) => {
                    // The window in progress is no longer contiguous audio.
                    let lost = buf.len() + n;
                    log::warn!("capture overrun: dropped {n} samples");
                    buf.clear();
                    buf_start += lost;
                    let dropped_audio_s = n as f64 / f64::from(self.rate);
                    self.log.dropped_audio_s += dropped_audio_s;
                    self.emit(StreamMessage::Gap { missed_events: 0, dropped_audio_s })?;
                }
                Captured::Done => {
                    if !buf.is_empty() {
                        let partial = std::mem::take(&mut buf);
                        self.analyze_window(partial, buf_start)?;
                    }
                    let events = self.log.events.len() as u64;
                    return self.emit(StreamMessage::End { events });
                }
                Captured::Failed(message) => return Err(ServiceError::CaptureFailed(message)),
            }
        }
    }
}

/// Streams `source` through the analyzer in back-to-back windows of
/// `cfg.window_s`, handing every message to `sink` in order.
///
/// Capture runs on its own thread behind a bounded queue. Replay sources wait
/// for room, so every sample is analysed; live sources never wait, and
/// overruns surface as gap messages. Failures end the stream with an error
/// message before the error is returned.
pub fn run_realtime(
    analyzer: &Analyzer,
    source: &CaptureSource,
    cfg: &RealtimeConfig,
    sink: &mut dyn FnMut(&StreamMessage),
) -> Result<SessionLog, ServiceError> {
    run_session(analyzer, cfg, sink, || Ok(source.open()?))
}

/// [`run_realtime`] over an already opened stream.
pub fn run_realtime_stream(
    analyzer: &Analyzer,
    stream: Box<dyn CaptureStream>,
    cfg: &RealtimeConfig,
    sink: &mut dyn FnMut(&StreamMessage),
) -> Result<SessionLog, ServiceError> {
    run_session(analyzer, cfg, sink, || Ok(stream))
}

fn run_session(
    analyzer: &Analyzer,
    cfg: &RealtimeConfig,
    sink: &mut dyn FnMut(&StreamMessage),
    open: impl FnOnce() -> Result<Box<dyn CaptureStream>, ServiceError>,
) -> Result<SessionLog, ServiceError> {
    let log_file = match &cfg.session_log {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut session = Session { analyzer, cfg, sink, log_file, log: SessionLog::default(), rate: 0 };

    let result = (|| {
        if !(cfg.window_s.is_finite() && cfg.window_s > 0.0) {
            return Err(ServiceError::Config(format!("window must be positive, got {} s", cfg.window_s)));
        }
        let analysis_rate = analyzer.pipeline().analysis_rate_hz;
        let needed = analyzer.min_samples(cfg.isolate);
        if seconds_to_samples(cfg.window_s, analysis_rate) < needed {
            return Err(ServiceError::Config(format!(
                "window of {} s is shorter than the {:.3} s needed for analysis",
                cfg.window_s,
                needed as f64 / f64::from(analysis_rate)
            )));
        }
        let stream = open()?;
        session.rate = stream.sample_rate_hz();
        if seconds_to_samples(cfg.window_s, session.rate) == 0 {
            return Err(ServiceError::Config("window holds no samples at the source rate".into()));
        }
        let (tx, rx) = bounded(cfg.queue_blocks.max(1));
        thread::scope(|scope| {
            scope.spawn(move || produce(stream, tx));
            // Returning drops the receiver, which unblocks and stops the producer.
            session.consume(rx)
        })
    })();

    match result {
        Ok(()) => Ok(session.log),
        Err(e) => {
            // Best effort: the stream is already failing.
            let _ = session.emit(StreamMessage::Error { message: e.to_string() });
            Err(e)
        }
    }
}
