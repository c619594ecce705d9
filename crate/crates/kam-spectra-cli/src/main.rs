use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kam_spectra_cli::config::ExperimentConfig;
use kam_spectra_cli::runner::{self, Overrides, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "kam-spectra",
    about = "Spectral stability experiments for perturbed diagonal lattice operators",
    version
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, clap::Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override run.mode (rigorous | empirical).
    #[arg(long)]
    mode: Option<String>,
    /// Override run.radius.
    #[arg(long)]
    radius: Option<i64>,
    /// Emit the per-step ledger (outputs.ledger must be set).
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Verify the gap conditions and the perturbation decay norm.
    Scan(CommonArgs),
    /// Print the derived admissibility constants.
    Constants(CommonArgs),
    /// Full pipeline: certify, iterate, cross-check, emit reports.
    Run(CommonArgs),
    /// One run per sweep parameter, aggregated CSV.
    Sweep(CommonArgs),
    /// Dense diagonalization of the truncated operator only.
    Oracle(CommonArgs),
}

type VerbAction = fn(&ExperimentConfig, &Overrides) -> anyhow::Result<serde_json::Value>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, action): (&CommonArgs, VerbAction) = match &cli.verb {
        Verb::Scan(a) => (a, runner::run_scan),
        Verb::Constants(a) => (a, runner::run_constants),
        Verb::Run(a) => (a, runner::run_experiment),
        Verb::Sweep(a) => (a, runner::run_sweep),
        Verb::Oracle(a) => (a, runner::run_oracle),
    };

    let config = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let overrides = Overrides {
        mode: args.mode.clone(),
        radius: args.radius,
        trace: args.trace,
    };

    match action(&config, &overrides) {
        Ok(report) => {
            if runner::print_json(&report).is_err() {
                return ExitCode::from(EXIT_CONFIG as u8);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(runner::exit_code_for(&e) as u8)
        }
    }
}
