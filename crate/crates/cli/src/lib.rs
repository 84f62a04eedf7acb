//! Command-line front end: estimation, simulation, Cramer-Rao bounds,
//! experiment presets and Toeplitz decomposition.

pub mod commands;
pub mod snapshot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{run, CliError};

#[derive(Debug, Parser)]
#[command(name = "mesa", version, about = "Stochastic maximum-likelihood DOA estimation on sparse linear arrays")]
pub struct Cli {
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate frequencies, powers and noise level from a snapshot file.
    Estimate(EstimateArgs),
    /// Draw snapshots from a source model and write a snapshot file.
    Simulate(SimulateArgs),
    /// Cramer-Rao bound on the frequencies of a source model.
    Crb(CrbArgs),
    /// Run a Monte Carlo experiment preset or TOML config.
    Experiment(ExperimentArgs),
    /// Vandermonde decomposition of a Hermitian Toeplitz matrix.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// ADMM penalty.
    #[arg(long)]
    pub mu: Option<f64>,
    /// MM iteration budget.
    #[arg(long = "mm-max")]
    pub mm_max: Option<usize>,
    /// ADMM iteration budget per MM iteration.
    #[arg(long = "admm-max")]
    pub admm_max: Option<usize>,
    /// Relative NLL change that stops the MM loop.
    #[arg(long = "mm-tol")]
    pub mm_tol: Option<f64>,
    /// Any other solver field, e.g. `--set admm_rel_tol=1e-6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Snapshot file written by `simulate` or another producer.
    pub input: PathBuf,
    /// Number of sources.
    #[arg(long, value_parser = positive)]
    pub k: usize,
    /// mesa, mesa1, ss_music or rootmusic.
    #[arg(long, default_value = "mesa")]
    pub method: String,
    /// Reinterpret the data on another geometry with the same sensor count.
    #[arg(long)]
    pub geometry: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `ula:N`, `mra`, `nested` or a comma-separated list of 1-based indices.
    #[arg(long)]
    pub geometry: String,
    /// Source frequencies in [-1/2, 1/2), comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub freqs: Vec<f64>,
    /// Source powers, comma-separated; defaults to 1 for every source.
    #[arg(long, value_delimiter = ',')]
    pub powers: Vec<f64>,
    /// Source correlation `i:j:modulus:phase` with 0-based indices.
    #[arg(long = "corr", value_name = "I:J:MOD:PHASE")]
    pub corr: Vec<String>,
    /// Noise power.
    #[arg(long, conflicts_with = "snr_db")]
    pub sigma: Option<f64>,
    /// SNR in dB relative to the mean source power.
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Number of snapshots L.
    #[arg(long, default_value_t = 100)]
    pub snapshots: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output snapshot file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrbArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Preset name (exp1 ... exp7) or path to a TOML experiment config.
    #[arg(required_unless_present = "list")]
    pub preset: Option<String>,
    /// List the presets and exit.
    #[arg(long)]
    pub list: bool,
    /// Monte Carlo runs per sweep point.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Base seed; run `r` uses `seed + r`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to these methods, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Override an experiment field by dotted path, e.g. `--set sweep.values=[0.0,10.0]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the resolved config as TOML instead of running.
    #[arg(long)]
    pub dry_run: bool,
    /// Directory for `<name>.csv` and `<name>_runs.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// First column of the Toeplitz matrix, e.g. `2,0.5+0.1i,-0.3i`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "input", required_unless_present = "input")]
    pub lags: Vec<String>,
    /// Snapshot file; its coarray covariance is decomposed.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of components; defaults to the numerical rank.
    #[arg(long, value_parser = positive)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}
