//! `sipr`: batch interpolation, regression, prediction and cross-validation
//! with scale-invariant processes.

mod archive;
mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};
use crate::io::Grid;

#[derive(Debug, Parser)]
#[command(name = "sipr", version, about = "Interpolation and regression with scale-invariant processes")]
struct Cli {
    /// Worker threads for chains and folds (0 = all cores). SIPR_JOBS
    /// overrides this.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Noise-free interpolation with pointwise t posteriors and sample paths.
    Interpolate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        probes: ProbeArgs,
        /// Number of sample paths to draw on the probes.
        #[arg(long, default_value_t = 0)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the regression posterior and save the model.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Noise scale in target units, or `unknown` to sample it.
        #[arg(long, default_value = "unknown")]
        noise: NoiseArg,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Write every kept draw as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Credible bands from a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        probes: ProbeArgs,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross-validated RMSE of the predictive mean.
    Crossval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "unknown")]
        noise: NoiseArg,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Headed CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Target column; every other column is a feature.
    #[arg(long)]
    target: String,
    /// Regularity (positive, non-integer).
    #[arg(long)]
    eta: f64,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// CSV with a column for each feature.
    #[arg(long)]
    probes: Option<PathBuf>,
    /// Evenly spaced probes; give one per feature for a product grid.
    #[arg(long, value_name = "LO:HI:N", allow_hyphen_values = true)]
    grid: Vec<Grid>,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = 2)]
    chains: usize,
    /// Draws per chain, burn-in included.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 500)]
    burn: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplerArgs {
    fn config(&self) -> sipr::SamplerConfig {
        sipr::SamplerConfig {
            chains: self.chains,
            samples_per_chain: self.samples,
            burn_in: self.burn,
            seed: self.seed,
            ..sipr::SamplerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NoiseArg {
    Known(f64),
    Unknown,
}

impl FromStr for NoiseArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("unknown") {
            return Ok(NoiseArg::Unknown);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(NoiseArg::Known(v)),
            _ => Err(format!("expected a positive noise scale or 'unknown', got '{s}'")),
        }
    }
}

impl NoiseArg {
    fn noise_spec(self) -> sipr::NoiseSpec<f64> {
        match self {
            NoiseArg::Known(v) => sipr::NoiseSpec::Known(v),
            NoiseArg::Unknown => sipr::NoiseSpec::Unknown,
        }
    }
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let jobs = match std::env::var("SIPR_JOBS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Invalid(format!("SIPR_JOBS must be a non-negative integer, got '{v}'")))?,
        ),
        Err(_) => flag,
    };
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("cannot start {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.jobs)?;
    match cli.command {
        Command::Interpolate { data, probes, paths, seed, out } => commands::interpolate(
            &data.data,
            &data.target,
            data.eta,
            probes.probes.as_deref(),
            &probes.grid,
            paths,
            seed,
            out.as_ref(),
        ),
        Command::Fit { data, noise, sampler, model_out, trace } => commands::fit(
            &data.data,
            &data.target,
            data.eta,
            noise.noise_spec(),
            sampler.config(),
            model_out.as_ref(),
            trace.as_ref(),
        ),
        Command::Predict { model, probes, level, out } => {
            commands::predict(&model, probes.probes.as_deref(), &probes.grid, level, out.as_ref())
        }
        Command::Crossval { data, folds, noise, sampler, out } => commands::crossval(
            &data.data,
            &data.target,
            data.eta,
            folds,
            noise.noise_spec(),
            sampler.config(),
            out.as_ref(),
        ),
    }
}

fn main() {
    // clap reports usage errors itself, with exit code 2
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
