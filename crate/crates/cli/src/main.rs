use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use vocemo_cli::commands::{self, TrainOptions};
use vocemo_cli::server::{ServeOptions, Server};
use vocemo_cli::CliError;
use vocemo_core::audio::CaptureSource;
use vocemo_core::separation::SeparationConfig;
use vocemo_core::service::{run_realtime, Analyzer, RealtimeConfig};

#[derive(Parser)]
#[command(name = "vocemo", version, about = "Emotion recognition for sung audio")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the waveform and dB mel spectrogram of a WAV file.
    Demo {
        input: PathBuf,
        #[arg(short, long, default_value = "demo_out")]
        out_dir: PathBuf,
        /// Waveform rows to keep after min/max downsampling.
        #[arg(long, default_value_t = 2000)]
        points: usize,
    },
    /// Train the classifier on a RAVDESS directory.
    Train {
        #[arg(long, env = "VOCEMO_DATASET_DIR")]
        dataset_dir: PathBuf,
        #[arg(short, long, default_value = "model_out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        test_fraction: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        /// Also use the speech recordings.
        #[arg(long)]
        include_speech: bool,
        /// Recompute features even if a cache exists.
        #[arg(long)]
        no_cache: bool,
    },
    /// Classify WAV files in fixed-length segments.
    Predict {
        /// A WAV file or a folder of them.
        input: PathBuf,
        #[arg(short, long, env = "VOCEMO_MODEL")]
        model: PathBuf,
        #[arg(short, long, default_value_t = 20.0)]
        segment: f64,
        /// Isolate the voice before classifying each segment.
        #[arg(long)]
        isolate: bool,
        /// Write one CSV per file here instead of printing.
        #[arg(short, long)]
        out_dir: Option<PathBuf>,
    },
    /// Separate a recording into voice and accompaniment.
    Isolate {
        input: PathBuf,
        /// Outputs are `<prefix>.foreground.wav` and `<prefix>.background.wav`.
        #[arg(short, long)]
        out_prefix: PathBuf,
        /// Also write the soft mask as CSV.
        #[arg(long)]
        mask: bool,
    },
    /// Split a WAV file into numbered segments.
    Split {
        input: PathBuf,
        #[arg(short, long)]
        segment: f64,
        #[arg(short, long, default_value = "segments")]
        out_dir: PathBuf,
    },
    /// Record audio to a WAV file.
    Record {
        #[arg(short, long)]
        seconds: f64,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Classify live audio every window and print one JSON message per line.
    Realtime {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Stream live predictions to WebSocket subscribers.
    Serve {
        #[arg(short, long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Hold the session until this many subscribers connect.
        #[arg(long, default_value_t = 0)]
        wait_for: usize,
        /// Seconds to keep serving history after the session ends.
        #[arg(long, default_value_t = 2.0)]
        linger: f64,
        #[arg(long, default_value_t = 256)]
        queue: usize,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        session: SessionArgs,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Replay this WAV file instead of a capture device.
    #[arg(long, conflicts_with = "device")]
    replay: Option<PathBuf>,
    /// Capture device name.
    #[arg(long)]
    device: Option<String>,
    /// Replay at wall-clock speed.
    #[arg(long, requires = "replay")]
    paced: bool,
    /// Capture block length in seconds.
    #[arg(long, default_value_t = 0.1)]
    block: f64,
}

impl SourceArgs {
    fn source(&self) -> CaptureSource {
        let src = match &self.replay {
            Some(p) => CaptureSource::file_replay(p).paced(self.paced),
            None => CaptureSource::device(self.device.clone().unwrap_or_else(|| "default".into())),
        };
        src.with_block_seconds(self.block)
    }
}

#[derive(Args)]
struct SessionArgs {
    #[arg(short, long, env = "VOCEMO_MODEL")]
    model: PathBuf,
    /// Analysis window in seconds.
    #[arg(short, long, default_value_t = 3.0)]
    window: f64,
    #[arg(long)]
    isolate: bool,
    /// Attach each window's feature vector to its event.
    #[arg(long)]
    features: bool,
    /// Append every message to this JSON-lines file.
    #[arg(long)]
    log: Option<PathBuf>,
}

impl SessionArgs {
    fn config(&self) -> RealtimeConfig {
        RealtimeConfig {
            window_s: self.window,
            isolate: self.isolate,
            include_features: self.features,
            session_log: self.log.clone(),
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Demo { input, out_dir, points } => {
            let s = commands::demo(&input, &out_dir, points)?;
            println!("{} mel bands x {} frames, loudest band {}", s.bands, s.frames, s.loudest_band);
            println!("wrote {}, {}, {}", s.waveform_csv.display(), s.spectrogram_csv.display(), s.spectrogram_png.display());
        }
        Command::Train {
            dataset_dir,
            out_dir,
            epochs,
            seed,
            test_fraction,
            batch_size,
            learning_rate,
            dropout,
            include_speech,
            no_cache,
        } => {
            let mut opts = TrainOptions::new(dataset_dir, out_dir, epochs, seed);
            opts.test_fraction = test_fraction;
            opts.batch_size = batch_size;
            opts.learning_rate = learning_rate;
            opts.dropout = dropout;
            opts.include_speech = include_speech;
            opts.use_cache = !no_cache;
            let out = commands::train(&opts)?;
            println!(
                "ingested {} clips ({} wav files seen); train {} / test {}",
                out.ingest.loaded, out.ingest.wav_files_seen, out.train_size, out.test_size
            );
            if let Some(last) = out.report.last() {
                println!("final epoch: train acc {:.3}, test acc {:.3}", last.train_acc, last.test_acc);
            }
            println!(
                "best test accuracy {:.3} at epoch {}",
                out.report.best_test_accuracy,
                out.report.best_epoch.unwrap_or(0)
            );
            println!("wrote {}, {}, {}", out.model_path.display(), out.curves_path.display(), out.confusion_path.display());
        }
        Command::Predict { input, model, segment, isolate, out_dir } => {
            let reports = commands::predict(&input, &model, segment, isolate, out_dir.as_deref())?;
            if out_dir.is_none() {
                for r in &reports {
                    println!("# {}", r.source);
                    print!("{}", r.to_csv_string());
                }
            } else {
                println!("wrote {} reports", reports.len());
            }
        }
        Command::Isolate { input, out_prefix, mask } => {
            let out = commands::isolate(&input, &out_prefix, mask, &SeparationConfig::default())?;
            println!("wrote {} and {}", out.foreground.display(), out.background.display());
        }
        Command::Split { input, segment, out_dir } => {
            let files = commands::split(&input, segment, &out_dir)?;
            println!("wrote {} segments to {}", files.len(), out_dir.display());
        }
        Command::Record { seconds, out, source } => {
            let clip = commands::record(seconds, &out, &source.source())?;
            println!("recorded {:.3} s to {}", clip.duration_seconds(), out.display());
        }
        Command::Realtime { source, session } => {
            let analyzer = Analyzer::load(&session.model)?;
            let stdout = std::io::stdout();
            run_realtime(&analyzer, &source.source(), &session.config(), &mut |m| {
                let mut out = stdout.lock();
                // A closed stdout must not stop the session.
                let _ = writeln!(out, "{}", m.to_json()).and_then(|_| out.flush());
            })?;
        }
        Command::Serve { port, host, wait_for, linger, queue, source, session } => {
            let analyzer = Analyzer::load(&session.model)?;
            let server = Server::bind(&host, port, queue)?;
            eprintln!("serving on ws://{}", server.local_addr());
            let opts = ServeOptions {
                realtime: session.config(),
                queue_capacity: queue,
                wait_for_subscribers: wait_for,
                wait_timeout: None,
                linger: Duration::from_secs_f64(linger.max(0.0)),
            };
            let log = server.run(&analyzer, &source.source(), &opts)?;
            eprintln!("session ended after {} events", log.events.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
