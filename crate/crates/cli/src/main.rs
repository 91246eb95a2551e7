//! `lrq`: run private, quantized local-SGD experiments and check the
//! quantizer and bound calculators from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LRQ_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "lrq", version, about = "Gaussian layered randomized quantization for private local SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write trace.csv, summary.json and bounds.json.
    Run(RunArgs),
    /// Monte-Carlo check that the quantization error is N(0, σ²).
    VerifyNoise(VerifyNoiseArgs),
    /// Evaluate every convergence bound for the given inputs.
    CompareBounds(CompareBoundsArgs),
    /// Quantize a few values and show layers, symbols and reconstructions.
    QuantizerDemo(DemoArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the root seed.
    #[arg(long, conflicts_with = "seed_file")]
    pub seed: Option<u64>,
    /// Override the run label.
    #[arg(long, conflicts_with = "seed_file")]
    pub run_id: Option<String>,
    /// Read `seed=<u64> run=<label>` from a file.
    #[arg(long)]
    pub seed_file: Option<PathBuf>,
    /// Output directory; falls back to the config's `output_dir`, then `lrq-out`.
    #[arg(long, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
    /// Override the algorithm.
    #[arg(long)]
    pub algo: Option<String>,
}

#[derive(Debug, clap::Args)]
pub struct VerifyNoiseArgs {
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Number of encode/decode round trips.
    #[arg(long, short = 'n', default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed input value quantized on every trial.
    #[arg(long, default_value_t = 0.37, allow_hyphen_values = true)]
    pub input: f64,
}

#[derive(Debug, clap::Args)]
pub struct CompareBoundsArgs {
    /// JSON file holding one bound-input object or an array of them.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, clap::Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Comma-separated values to quantize.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0.3,-1.2,0.05,2.0")]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(&args),
        Command::VerifyNoise(args) => commands::verify_noise(&args),
        Command::CompareBounds(args) => commands::compare_bounds(&args),
        Command::QuantizerDemo(args) => commands::quantizer_demo(&args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
