//! `confgap`: domain-gap measurement from the command line.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or input
//! error. Summary tables go to stdout, logs to stderr.

mod commands;
mod config;
mod failure;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigArgs;

#[derive(Parser, Debug)]
#[command(
    name = "confgap",
    version,
    about = "Conformal domain-gap scoring over sparse-dynamics features"
)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit sparse dynamics per trajectory and write a features artifact.
    Extract(commands::ExtractArgs),
    /// Calibrate the conformal bound on source features.
    Calibrate(commands::CalibrateArgs),
    /// Score a target against a calibrated source.
    Sdcd(commands::SdcdArgs),
    /// Search for the feature subset with the best average SDCD.
    Refine(commands::RefineArgs),
    /// Generate synthetic domains, or run a shift sweep.
    Simulate(commands::SimulateArgs),
    /// Rescore sources and targets under feature noise at several PSNR levels.
    SweepNoise(commands::SweepNoiseArgs),
    /// Empirical coverage of the bound over random calibration splits.
    Coverage(commands::CoverageArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.config.load().and_then(|cfg| match &cli.command {
        Command::Extract(a) => commands::extract(a, &cfg),
        Command::Calibrate(a) => commands::calibrate(a, &cfg),
        Command::Sdcd(a) => commands::sdcd(a, &cfg),
        Command::Refine(a) => commands::refine(a, &cfg),
        Command::Simulate(a) => commands::simulate(a, &cfg),
        Command::SweepNoise(a) => commands::sweep_noise(a, &cfg),
        Command::Coverage(a) => commands::coverage(a, &cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("confgap: {f}");
            f.exit_code()
        }
    }
}
