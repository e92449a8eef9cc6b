//! `pulsenet`: generate, ingest, train, evaluate and query first-spike
//! networks.
//!
//! Exit codes: 0 success, 1 training failure, 2 I/O or configuration,
//! 3 malformed input file, 4 shape or contract violation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pulsenet::Error;

use crate::config::{RunConfig, Task};

#[derive(Parser, Debug)]
#[command(name = "pulsenet", version, about = "First-spike temporal-coding SNNs for raw pulse data")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, env = "PULSENET_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a Sim LiDAR dataset.
    GenSim(GenSimArgs),
    /// Write synthetic KITTI-format scans (velodyne/, calib/, label_2/).
    GenKitti(GenKittiArgs),
    /// Write synthetic DVS motif event streams, one directory per class.
    GenDvs(GenDvsArgs),
    /// Convert sensor recordings into a dataset.
    Ingest(IngestArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write metric reports.
    Eval(EvalArgs),
    /// Classify a single SPKT frame.
    Predict(PredictArgs),
    /// Dump an SPKT frame as a grayscale PGM image.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct GenSimArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Upper bound of the per-pixel noise amplitude.
    #[arg(long)]
    pub noise: Option<f32>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenKittiArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub scans: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenDvsArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample windows per class.
    #[arg(long, default_value_t = 10)]
    pub windows: usize,
    /// Timing jitter, as a fraction of the window.
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(value_enum)]
    pub source: IngestSource,
    /// Input directory (KITTI root, or one subdirectory per DVS class).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test split size; the rest goes to training unless `--train` is set.
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    /// Shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// DVS window length in microseconds.
    #[arg(long)]
    pub window_us: Option<u32>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum IngestSource {
    Kitti,
    Dvs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Task whose model and hyperparameter presets apply (default: the
    /// dataset's task).
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Model preset name, overriding the task's.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop once training accuracy reaches this fraction.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Train on at most this many samples per class (balanced subset).
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Skip the gradient self-test that normally runs first.
    #[arg(long)]
    pub skip_self_test: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Histogram bins.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MetricArgs {
    /// Emitter rate in points per second.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Energy per spike in joules.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// SPKT frame to classify.
    pub frame: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    pub frame: PathBuf,
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io { .. } | Error::Config(_) | Error::Json(_) => 2,
        Error::Format { .. } => 3,
        Error::Shape(_) | Error::Contract(_) | Error::Range { .. } | Error::InvalidSpikes(_) | Error::InvalidParams(_) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> pulsenet::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenSim(a) => commands::gen_sim(&cfg, a),
        Command::GenKitti(a) => commands::gen_kitti(&cfg, a),
        Command::GenDvs(a) => commands::gen_dvs(&cfg, a),
        Command::Ingest(a) => commands::ingest(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Predict(a) => commands::predict(&cfg, a),
        Command::Render(a) => commands::render(a),
    }
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
            ExitCode::from(exit_code(&e))
        }
    }
}
