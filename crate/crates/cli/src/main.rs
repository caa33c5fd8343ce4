//! `couette-lab` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on
//! numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use couette_lab::harness::drivers::{
    load_config, run_audit, run_decay_fit, run_resolvent_sweep, run_simulate, run_threshold_scan,
    run_verify_estimates,
};
use couette_lab::harness::with_worker_pool;
use couette_lab::LabError;

#[derive(Parser, Debug)]
#[command(name = "couette-lab", version, about = "Spectral experiments on the Boussinesq system near Couette flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML configuration file.
    config: PathBuf,
    /// Override the primary output path of the configuration.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Suppress the text summary.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resolvent norm ratios over a (k, mu, lambda) grid.
    ResolventSweep(Common),
    /// Enhanced-dissipation decay rates and their scaling fits.
    DecayFit(Common),
    /// Forced space-time estimates and their implied constants.
    VerifyEstimates(Common),
    /// One nonlinear run with ledger output.
    Simulate(Common),
    /// Critical-amplitude bisection over viscosities.
    ThresholdScan(Common),
    /// Bootstrap audit of a ledger CSV.
    AuditEnergy(Common),
}

fn dispatch(cmd: &Command) -> Result<(String, bool), LabError> {
    let (common, text) = match cmd {
        Command::ResolventSweep(c) => (c, run_resolvent_sweep(&load_config(&c.config)?, c.output.as_deref())?),
        Command::DecayFit(c) => (c, run_decay_fit(&load_config(&c.config)?, c.output.as_deref())?),
        Command::VerifyEstimates(c) => (c, run_verify_estimates(&load_config(&c.config)?, c.output.as_deref())?),
        Command::Simulate(c) => (c, run_simulate(&load_config(&c.config)?, c.output.as_deref())?.1),
        Command::ThresholdScan(c) => (c, run_threshold_scan(&load_config(&c.config)?, c.output.as_deref())?.1),
        Command::AuditEnergy(c) => (c, run_audit(&load_config(&c.config)?, c.output.as_deref())?),
    };
    Ok((text, common.quiet))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = with_worker_pool(|| dispatch(&cli.command)).and_then(|r| r);
    match result {
        Ok((text, quiet)) => {
            if !quiet {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
