use std::path::PathBuf;

use clap::Args;
use confgap::persistence::load_payload;
use confgap::{sdcd, DcbCalibration64};
use serde_json::json;

use super::save_artifact;
use crate::config::RunConfig;
use crate::failure::{CliResult, Failure, InputContext};
use crate::io;

#[derive(Args, Debug)]
pub struct SdcdArgs {
    /// Target features (artifact or CSV).
    #[arg(long)]
    pub target: PathBuf,
    /// Source features the calibration was computed on.
    #[arg(long)]
    pub source: PathBuf,
    /// Calibration artifact.
    #[arg(long)]
    pub calibration: PathBuf,
    /// SDCD report artifact to write.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Target name in the report; defaults to the file stem.
    #[arg(long)]
    pub name: Option<String>,
}

pub fn run(args: &SdcdArgs, cfg: &RunConfig) -> CliResult<()> {
    let cal: DcbCalibration64 = load_payload(&args.calibration)
        .input(&format!("loading {}", args.calibration.display()))?;
    let source = io::read_features(&args.source)?.features;
    if source.fingerprint() != cal.source_fingerprint {
        return Err(Failure::usage(format!(
            "{} is not the feature set {} was calibrated on",
            args.source.display(),
            args.calibration.display()
        )));
    }
    let target = io::read_features(&args.target)?.features;
    let name = args.name.clone().unwrap_or_else(|| {
        args.target
            .file_name()
            .map(|n| {
                n.to_string_lossy()
                    .split('.')
                    .next()
                    .unwrap_or_default()
                    .to_string()
            })
            .unwrap_or_default()
    });
    let report = sdcd(&name, &target, &source, &cal)?;
    if let Some(path) = &args.report {
        let config = json!({
            "run": cfg.to_value(),
            "calibration_ref": report.calibration_ref,
            "source_fingerprint": cal.source_fingerprint,
        });
        save_artifact(&report, config, path)?;
    }
    println!(
        "{:<24} {:>6} {:>10} {:>8}",
        "target", "rows", "in_bounds", "sdcd_%"
    );
    println!(
        "{:<24} {:>6} {:>10} {:>8.2}",
        report.target_name,
        report.residuals.len(),
        report.n_in_bounds(),
        report.sdcd_percent
    );
    Ok(())
}
