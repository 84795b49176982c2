use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "mrf-accel",
    version,
    about = "MRF T1/T2 accelerator: data, training, verification and cost model"
)]
pub struct Cli {
    /// Seed for data generation, initialization, sampling and verification.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON file with [network], [dataset], [train] and [hardware] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (generate) or directory (other commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a surrogate MRF dataset.
    Generate(GenerateArgs),
    /// Train a float or quantization-aware model.
    Train(TrainArgs),
    /// Evaluate one or two models on a dataset.
    Eval(EvalArgs),
    /// Check scheduled against direct integer execution.
    Verify(VerifyArgs),
    /// Cycle, training-time and resource estimates.
    Estimate(EstimateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub t1_min: Option<f64>,
    #[arg(long)]
    pub t1_max: Option<f64>,
    #[arg(long)]
    pub t2_min: Option<f64>,
    #[arg(long)]
    pub t2_max: Option<f64>,
    #[arg(long)]
    pub snr_min: Option<f64>,
    #[arg(long)]
    pub snr_max: Option<f64>,
    /// Signal length L (the network input is 2L).
    #[arg(long)]
    pub length: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Float,
    Qat,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Leading training samples used for activation-range calibration.
    #[arg(long)]
    pub calibration_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file; give two to compare (e.g. float then quantized).
    #[arg(long = "model", required = true, num_args = 1)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Integer model to drive with random inputs. Without it, every trial
    /// draws a fresh random network.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Test fixture: truncating requantizer on this layer.
    #[arg(long, hide = true)]
    pub corrupt_layer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, default_value_t = 250_000_000)]
    pub samples: u64,
    /// Include the PCIe interface in the resource totals.
    #[arg(long)]
    pub pcie: bool,
    /// Clock in MHz.
    #[arg(long)]
    pub clock: Option<f64>,
    #[arg(long)]
    pub parallel_nodes: Option<u64>,
    /// Hardware profile file (TOML or JSON); replaces the config's [hardware].
    #[arg(long)]
    pub profile: Option<PathBuf>,
}
