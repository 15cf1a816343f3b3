use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bnar::cli::{self, ExperimentConfig, Scale};
use bnar::Error;

/// Stochastic Burgers simulation and NAR closure-model experiments.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error,
/// 4 numerical blow-up in a required stage.
#[derive(Parser)]
#[command(name = "bnar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// JSON experiment config; missing fields take the reference defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the force scale σ.
    #[arg(long)]
    sigma: Option<f64>,
    /// Override the number of reduced modes K.
    #[arg(long)]
    k_modes: Option<usize>,
    /// Override the comma-separated gap list.
    #[arg(long, value_delimiter = ',')]
    gaps: Option<Vec<usize>>,
    /// Override the comma-separated lag list.
    #[arg(long, value_delimiter = ',')]
    lags: Option<Vec<usize>>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// quick (desk scale) or paper (full reproduction).
    #[arg(long)]
    scale: Option<Scale>,
}

impl CommonOpts {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(sigma) = self.sigma {
            cfg.full_model.sigma = sigma;
        }
        if let Some(k) = self.k_modes {
            cfg.reduction.k_modes = k;
        }
        if let Some(gaps) = &self.gaps {
            cfg.reduction.gaps = gaps.clone();
        }
        if let Some(lags) = &self.lags {
            cfg.reduction.lags = lags.clone();
        }
        if let Some(seed) = self.seed {
            cfg.data.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(scale) = self.scale {
            cfg.scale = scale;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full model and report its mean CFL number.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Fine steps to run (0 writes header-only outputs).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Burn in, draw the initial ensemble and write training/validation
    /// datasets for every gap.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Fit NAR models for every requested (gap, lag) pair.
    Fit {
        #[command(flatten)]
        common: CommonOpts,
        /// Directory holding gap{G}.bnar files (default: OUT/data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Simulate a fitted model and compare its statistics to the truth.
    Validate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        gap: usize,
        #[arg(long, default_value_t = 1)]
        lag: usize,
        /// Model JSON (default: OUT/fit/model_gap{G}_p{P}.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Truth dataset (default: OUT/data/validation.bnar).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Full study: data, fits, validations and the CFL comparison table.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn run() -> Result<(), Error> {
    cli::init_worker_pool();
    let args = Cli::parse();
    match args.command {
        Command::Simulate { common, steps } => cli::cmd_simulate(&common.resolve()?, steps),
        Command::GenData { common } => cli::cmd_gen_data(&common.resolve()?),
        Command::Fit { common, data } => cli::cmd_fit(&common.resolve()?, data.as_deref()),
        Command::Validate {
            common,
            gap,
            lag,
            model,
            data,
        } => cli::cmd_validate(&common.resolve()?, gap, lag, model.as_deref(), data.as_deref()),
        Command::Sweep { common } => cli::cmd_sweep(&common.resolve()?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) => 2,
                Error::Data(_) | Error::Io(_) | Error::Json(_) => 3,
                Error::Integration { .. } => 4,
                Error::Evaluation(_) => 1,
            };
            ExitCode::from(code)
        }
    }
}
