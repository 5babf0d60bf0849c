use std::path::PathBuf;

use clap::Args;
use confgap::synthetic::{noise_sweep, reference_classifier, SweepGroup, SweepTarget};
use serde_json::json;

use super::simulate::{effective_config, read_spec, run_sweep};
use super::{opt, save_artifact};
use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};
use crate::io;

#[derive(Args, Debug)]
pub struct SweepNoiseArgs {
    /// Scenario spec with a `sweep` section; its shift sweep supplies the domains.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    pub scenario: Option<PathBuf>,
    /// Labeled source feature CSV.
    #[arg(long, requires = "target")]
    pub source: Option<PathBuf>,
    /// Labeled target feature CSV; repeat for several targets.
    #[arg(long)]
    pub target: Vec<PathBuf>,
    /// PSNR levels in dB; `inf` is the noiseless level.
    #[arg(long, value_delimiter = ',', default_value = "inf,30,20,10,0")]
    pub levels: Vec<String>,
    /// Sweep table CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the table as an artifact.
    #[arg(long)]
    pub artifact: Option<PathBuf>,
}

pub fn parse_level(s: &str) -> CliResult<Option<f64>> {
    match s.trim() {
        "inf" | "clean" => Ok(None),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| Failure::usage(format!("bad PSNR level `{s}`"))),
    }
}

pub fn run(args: &SweepNoiseArgs, cfg: &RunConfig) -> CliResult<()> {
    let levels = args
        .levels
        .iter()
        .map(|s| parse_level(s))
        .collect::<CliResult<Vec<_>>>()?;
    let (groups, config) = match (&args.scenario, &args.source) {
        (Some(path), _) => {
            let spec = read_spec(path, cfg)?;
            let (_, sweep) = run_sweep(&spec, cfg)?;
            (sweep.groups, effective_config(&spec, cfg))
        }
        (None, Some(src_path)) => {
            let source = io::read_features(src_path)?;
            let src_labels = source.labels.ok_or_else(|| {
                Failure::usage(format!("{} has no label column", src_path.display()))
            })?;
            let mut targets = Vec::new();
            for path in &args.target {
                let t = io::read_features(path)?;
                let labels = t.labels.ok_or_else(|| {
                    Failure::usage(format!("{} has no label column", path.display()))
                })?;
                let accuracy =
                    reference_classifier(&source.features, &src_labels, &t.features, &labels)?;
                targets.push(SweepTarget {
                    name: path.display().to_string(),
                    features: t.features,
                    accuracy,
                });
            }
            let group = SweepGroup {
                source: source.features,
                targets,
            };
            let config = json!({
                "run": cfg.to_value(),
                "source": src_path,
                "targets": args.target,
            });
            (vec![group], config)
        }
        (None, None) => {
            return Err(Failure::usage(
                "pass either --scenario or --source with --target",
            ))
        }
    };
    let table = noise_sweep(&groups, &levels, &cfg.calibration_options(), cfg.split_seed)?;
    let psnr = |p: Option<f64>| p.map_or_else(|| "inf".to_string(), |v| v.to_string());
    io::write_records(
        &args.out,
        &["psnr_db", "group", "target", "sdcd", "accuracy"],
        table.rows.iter().flat_map(|r| {
            r.entries.iter().map(move |e| {
                vec![
                    psnr(r.psnr_db),
                    e.group.to_string(),
                    e.target.clone(),
                    e.sdcd.to_string(),
                    e.accuracy.to_string(),
                ]
            })
        }),
    )?;
    if let Some(path) = &args.artifact {
        let mut config = config;
        config["levels"] = json!(args.levels);
        save_artifact(&table, config, path)?;
    }
    println!("{:>8} {:>10} {:>12}", "psnr_db", "mean_sdcd", "correlation");
    for r in &table.rows {
        println!(
            "{:>8} {:>10.2} {:>12}",
            psnr(r.psnr_db),
            r.mean_sdcd,
            opt(r.correlation)
        );
    }
    Ok(())
}
