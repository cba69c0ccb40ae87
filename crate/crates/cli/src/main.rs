//! `tsvision` command-line front-end.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::RunArgs;
use tsvision::ErrorCategory;

#[derive(Debug, Parser)]
#[command(name = "tsvision", version, about = "Time series classification through frozen vision-transformer features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render every channel of every sample to PNG and tabulate patch geometry.
    Transform {
        #[command(flatten)]
        run: RunArgs,
        /// Only write stats.csv.
        #[arg(long)]
        stats_only: bool,
    },
    /// Embed datasets into resumable on-disk archives, one per layer and split.
    Embed(RunArgs),
    /// Linear probe with validation-selected regularization over seeds.
    Classify(RunArgs),
    /// Nearest-centroid classification.
    ZeroShot(RunArgs),
    /// Concatenate train/test archives of several backbones column-wise.
    Fuse {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding `train/` and `test/` archives; give two or more.
        #[arg(long = "from", required = true, num_args = 1)]
        from: Vec<PathBuf>,
    },
    /// Classification accuracy at each layer.
    LayerSweep(RunArgs),
    /// Intrinsic dimension, PCA and mutual k-NN alignment of representations.
    Analyze {
        #[command(flatten)]
        run: RunArgs,
        /// Archive directories to analyze instead of dataset embeddings.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Neighbors for the alignment score.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Share of total variance the PCA count must cover.
        #[arg(long, default_value_t = 0.95)]
        variance: f64,
        /// Repeat the ID estimate on subsamples of this fraction.
        #[arg(long)]
        subsample: Option<f64>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Exact 1D-vs-2D patching relevance check on a synthetic instance.
    Theory(commands::TheoryArgs),
}

/// Everything a command can fail with, mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Core(tsvision::Error),
}

impl From<tsvision::Error> for Failure {
    fn from(e: tsvision::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Core(e) => match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Backend => 4,
            },
        }
    }

    fn report(&self) -> serde_json::Value {
        let kind = match self.exit_code() {
            2 => "config",
            3 => "data",
            _ => "backend",
        };
        let mut v = json!({ "error": kind, "message": self.to_string() });
        if let Failure::Core(e) = self {
            let (failed, inner) = match e {
                tsvision::Error::EmbedSamples { failed, source } => (Some(failed), source.as_ref()),
                other => (None, other),
            };
            if let Some(f) = failed {
                v["failed_samples"] = json!(f);
            }
            if let tsvision::Error::Backend { endpoint, code, .. } = inner {
                v["endpoint"] = json!(endpoint);
                v["code"] = json!(code);
            }
        }
        v
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Transform { run, stats_only } => commands::transform(&run, stats_only),
        Command::Embed(run) => commands::embed(&run),
        Command::Classify(run) => commands::classify(&run, false),
        Command::ZeroShot(run) => commands::classify(&run, true),
        Command::Fuse { run, from } => commands::fuse(&run, &from),
        Command::LayerSweep(run) => commands::layer_sweep(&run),
        Command::Analyze {
            run,
            inputs,
            k,
            variance,
            subsample,
            repeats,
        } => commands::analyze(
            &run,
            &inputs,
            &commands::AnalyzeOptions {
                k,
                variance,
                subsample,
                repeats,
            },
        ),
        Command::Theory(args) => commands::theory(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tsvision: {f}");
            eprintln!("{}", f.report());
            ExitCode::from(f.exit_code())
        }
    }
}
