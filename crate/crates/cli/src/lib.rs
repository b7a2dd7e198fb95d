//! The `cryforge` command line: corpus preparation, training, generation,
//! mel analysis and schedule inspection.
//!
//! Exit codes are 0 on success, 1 when a command fails while running and 2
//! for invalid invocations (bad flags, config keys or values, unreadable
//! inputs named on the command line).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::{RunConfig, KEYS, SEED_ENV};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "cryforge", version, about = "Unconditional waveform diffusion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a directory of WAV files into normalized fixed-length clips.
    Prepare(PrepareArgs),
    /// Train a noise-prediction network.
    Train(TrainArgs),
    /// Generate waveforms from a checkpoint.
    Generate(GenerateArgs),
    /// Compute an 80-channel log-mel spectrogram.
    Mel(MelArgs),
    /// Print the variance schedule as CSV.
    #[command(name = "schedule-inspect")]
    ScheduleInspect(ScheduleArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory searched recursively for .wav files.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for clips/ and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Clip length; the remainder of each file is discarded.
    #[arg(long, default_value_t = 1.0)]
    pub clip_seconds: f64,
    /// Target sample rate in Hz.
    #[arg(long, default_value_t = 16000)]
    pub rate: u32,
}

/// Flags shared by commands that read a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Manifest CSV from `prepare`, or a directory of 16 kHz WAV files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory for the checkpoint, log and saved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total optimizer steps, counting steps already taken when resuming.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Seed for initialization, batches, steps and noise.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Number of waveforms.
    #[arg(long)]
    pub num: Option<usize>,
    /// Samples per waveform; defaults to the model's training length.
    #[arg(long)]
    pub length: Option<usize>,
    /// Sample `k` of a run depends only on this seed and `k`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use a reduced reverse chain with this many steps.
    #[arg(long)]
    pub fast_steps: Option<usize>,
    /// Output directory for WAV files and the generation manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MelFormat {
    Csv,
    Raw,
    Pgm,
}

#[derive(Debug, Args)]
pub struct MelArgs {
    /// WAV file; other rates are resampled to 16 kHz and stereo is averaged.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = MelFormat::Csv)]
    pub format: MelFormat,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Number of diffusion steps.
    #[arg(long = "T", default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&a),
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Mel(a) => commands::mel(&a),
        Command::ScheduleInspect(a) => commands::schedule_inspect(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
