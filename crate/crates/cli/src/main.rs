//! `road`: pixel-removal evaluation pipelines from the command line.

mod commands;
mod error;
mod evaluate;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use road_core::RemovalOrder;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "road", version, about = "Evaluate attribution maps by removing and imputing pixels")]
struct Cli {
    /// Root seed for every random stream. Falls back to ROAD_SEED, then to the
    /// run config, then to 0.
    #[arg(long, global = true, env = "ROAD_SEED")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the Gaussian-process toy dataset with its five handcrafted orderings.
    Toy(ToyArgs),
    /// Impute a dataset for one saliency map, removal order, fraction and strategy.
    Impute(ImputeArgs),
    /// Run the evaluation described by a JSON run config.
    Evaluate(EvaluateArgs),
    /// Check the information identities on random joint tables.
    MiCheck(MiCheckArgs),
    /// Time noisy linear imputation against the number of unknown pixels.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 28, value_parser = clap::value_parser!(u64).range(1..))]
    pub height: u64,
    #[arg(long, default_value_t = 28, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,
    /// Kernel length scale as a fraction of the image width.
    #[arg(long)]
    pub kernel_width: Option<f64>,
    /// Amplitude of the class mean patterns.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Sinusoid periods of the class mean patterns across the image.
    #[arg(long)]
    pub frequency: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrderArg {
    Morf,
    Lerf,
}

impl From<OrderArg> for RemovalOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Morf => RemovalOrder::Morf,
            OrderArg::Lerf => RemovalOrder::Lerf,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Fixed,
    NoisyLinear,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    /// Dataset directory with images.npy and labels.npy.
    #[arg(long)]
    pub data: PathBuf,
    /// Method name (reads saliency_<name>.npy from the dataset) or a path to an
    /// H×W or N×H×W array.
    #[arg(long)]
    pub saliency: String,
    #[arg(long, value_enum, default_value_t = OrderArg::Morf)]
    pub order: OrderArg,
    /// Removed fraction for MoRF, kept fraction for LeRF.
    #[arg(long)]
    pub eta: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::NoisyLinear)]
    pub strategy: StrategyArg,
    /// Noise standard deviation as a fraction of each image's value range.
    #[arg(long, conflicts_with = "sigma")]
    pub noise: Option<f64>,
    /// Absolute noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Fill value for the fixed strategy, one per channel; default dataset mean.
    #[arg(long, value_delimiter = ',')]
    pub fill: Option<Vec<f64>>,
    /// Relative residual tolerance of the linear solver.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Output directory for the imputed images.npy and labels.npy.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON run config.
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct MiCheckArgs {
    /// Random joints per identity.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Largest tolerated deviation.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Image side lengths.
    #[arg(long, value_delimiter = ',', default_value = "28")]
    pub sizes: Vec<usize>,
    /// Removed fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub fractions: Vec<f64>,
    /// Timed repetitions per point (at least 5).
    #[arg(long, default_value_t = 15)]
    pub reps: usize,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    let work = move || match cli.command {
        Command::Toy(a) => commands::toy(&a, seed.unwrap_or(0)),
        Command::Impute(a) => commands::impute(&a, seed.unwrap_or(0)),
        Command::Evaluate(a) => evaluate::evaluate(&a, seed),
        Command::MiCheck(a) => commands::mi_check(&a, seed.unwrap_or(0)),
        Command::Bench(a) => commands::bench(&a, seed.unwrap_or(0)),
    };
    match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("road: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
