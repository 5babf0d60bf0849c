use std::path::PathBuf;

use clap::Args;
use confgap::dcb_compute;

use super::{log, save_artifact};
use crate::config::RunConfig;
use crate::failure::CliResult;
use crate::io;

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Source features (artifact or CSV).
    #[arg(long)]
    pub source: PathBuf,
    /// Calibration artifact to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &CalibrateArgs, cfg: &RunConfig) -> CliResult<()> {
    let source = io::read_features(&args.source)?.features;
    let cal = dcb_compute(&source, &cfg.calibration_options())?;
    if cal.degenerate {
        log("source covariance or residual spread is degenerate; the bound may be uninformative");
    }
    save_artifact(&cal, cfg.to_value(), &args.out)?;
    println!(
        "sigma {:.6}  interval [{:.6}, {:.6}]  k_index {}/{}  n_train {}  n_val {}  alpha {}",
        cal.sigma,
        cal.interval_lo,
        cal.interval_hi,
        cal.k_index,
        cal.n_val,
        cal.n_train,
        cal.n_val,
        cal.alpha
    );
    Ok(())
}
