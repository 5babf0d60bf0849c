use std::path::PathBuf;

use clap::Args;
use confgap::conformal::coverage_against;
use confgap::coverage_check;

use crate::config::RunConfig;
use crate::failure::CliResult;
use crate::io;

#[derive(Args, Debug)]
pub struct CoverageArgs {
    /// Source features (artifact or CSV).
    #[arg(long)]
    pub source: PathBuf,
    /// Score this set instead of held-out source rows.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Number of random calibration splits.
    #[arg(long)]
    pub trials: Option<usize>,
}

pub fn run(args: &CoverageArgs, cfg: &RunConfig) -> CliResult<()> {
    let source = io::read_features(&args.source)?.features;
    let trials = args.trials.unwrap_or(cfg.coverage_trials).max(1);
    let opts = cfg.calibration_options();
    let result = match &args.heldout {
        Some(path) => {
            let heldout = io::read_features(path)?.features;
            coverage_against(&source, &heldout, trials, cfg.split_seed, &opts)?
        }
        None => coverage_check(&source, trials, cfg.split_seed, &opts)?,
    };
    let min = result
        .per_trial
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = result
        .per_trial
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{:>6} {:>10} {:>8} {:>8} {:>8}",
        "trials", "coverage", "min", "max", "nominal"
    );
    println!(
        "{:>6} {:>10.4} {:>8.4} {:>8.4} {:>8.4}",
        trials,
        result.mean,
        min,
        max,
        1.0 - cfg.alpha
    );
    Ok(())
}
