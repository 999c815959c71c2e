//! `faceage`: train, apply and evaluate personalized re-aging adapters.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use faceage_core::{BackendKind, Task};

#[derive(Debug, Parser)]
#[command(name = "faceage", version, about = "Personalized face re-aging toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Backend override (toy | real).
    #[arg(long, global = true, value_parser = parse_backend)]
    pub backend: Option<BackendKind>,
    /// Seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: faceage_core::config::ConfigError| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an adapter on a photo collection.
    Train(TrainArgs),
    /// Re-age one image.
    Reage(ReageArgs),
    /// Run an evaluation protocol.
    Eval(EvalArgs),
    /// Re-age a keyframe and swap it into every frame.
    Video(VideoArgs),
    /// Inspect, ingest or synthesize photo collections.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Component ladder and dataset-size ablations.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Components to switch off: adapter, extra, persage, wnorm.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Continue from a checkpoint directory of the same configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReageArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Target age in years, 0..=100.
    #[arg(long, allow_negative_numbers = true)]
    pub age: f64,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Use the global path even when a checkpoint is given.
    #[arg(long)]
    pub no_adapter: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Regression,
    Progression,
    Both,
}

impl TaskArg {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskArg::Regression => vec![Task::Regression],
            TaskArg::Progression => vec![Task::Progression],
            TaskArg::Both => vec![Task::Regression, Task::Progression],
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub no_adapter: bool,
    #[arg(long, value_enum, default_value = "both")]
    pub task: TaskArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VideoArgs {
    /// Directory of frame_<n>.png files.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub keyframe: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub age: f64,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Check a manifest and print its age coverage.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Align raw photos listed in ages.csv and write a manifest.
    Ingest {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write a synthetic toy collection.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        person: u64,
        /// Number of training photos; defaults to 12 over 30..70.
        #[arg(long)]
        train_count: Option<usize>,
        #[arg(long, default_value_t = 30.0)]
        min_age: f64,
        #[arg(long, default_value_t = 70.0)]
        max_age: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblateMode {
    Ladder,
    Sizes,
    Both,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "ladder")]
    pub mode: AblateMode,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    pub sizes: Vec<usize>,
    /// Report aggregate the table is built from.
    #[arg(long, default_value = "overall")]
    pub aggregate: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
