use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod run_dir;

use config::ExperimentConfig;
use error::CliError;
use run_dir::{sha256_hex, RunDir};

type Stage = fn(&ExperimentConfig, &mut RunDir) -> Result<(), CliError>;

/// Bubble-data experiments for the generalized SQG family.
#[derive(Parser)]
#[command(name = "sqg-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the initial data and check the bubble ordering.
    GenData(Common),
    /// Compare the spectral velocity with direct kernel summation.
    VerifyKernel(Common),
    /// Key Lemma residuals on the data and the Hardy suite.
    VerifyLemmas(Common),
    /// Integrate in time, storing snapshots and diagnostics.
    Evolve(Common),
    /// Advect markers through the stored snapshots and check the claims.
    Trace(Common),
    /// Inflation summary and plot tables.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config
    #[arg(long)]
    config: PathBuf,
    /// run directory
    #[arg(long)]
    out: PathBuf,
    /// overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (stage, args): (Stage, Common) = match cli.command {
        Command::GenData(a) => (commands::gen_data, a),
        Command::VerifyKernel(a) => (commands::verify_kernel, a),
        Command::VerifyLemmas(a) => (commands::verify_lemmas, a),
        Command::Evolve(a) => (commands::evolve, a),
        Command::Trace(a) => (commands::trace, a),
        Command::Report(a) => (commands::report, a),
    };
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let hash = sha256_hex(cfg.canonical_json().as_bytes());
    let mut dir = RunDir::open(&args.out, &hash)?;
    stage(&cfg, &mut dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
