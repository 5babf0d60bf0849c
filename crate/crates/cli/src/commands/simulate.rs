use std::path::{Path, PathBuf};

use clap::Args;
use confgap::persistence::ShiftSweepTable;
use confgap::synthetic::{
    domain_features, generate_scenario, reference_classifier, shift_sweep, ShiftScenario,
    ShiftSweep,
};
use confgap::{dcb_compute, sdcd, FeatureSource, StridgeParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{log, opt, save_artifact};
use crate::config::RunConfig;
use crate::failure::{CliResult, Failure, InputContext, OutputContext};
use crate::io;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory for the generated domains and artifacts.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default)]
    pub scenario: ShiftScenario,
    #[serde(default = "default_features")]
    pub features: FeatureSource,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn default_features() -> FeatureSource {
    FeatureSource::DataDerived
}

/// Reads a spec; a scenario without `steps` gets its dynamics' recommended
/// length, and library flags in `cfg` replace the scenario's library.
pub fn read_spec(path: &Path, cfg: &RunConfig) -> CliResult<SimulateSpec> {
    let ctx = format!("reading spec {}", path.display());
    let text = std::fs::read_to_string(path).input(&ctx)?;
    let value: Value = serde_json::from_str(&text).input(&ctx)?;
    let has_steps = value.get("scenario").and_then(|s| s.get("steps")).is_some();
    let mut spec: SimulateSpec = serde_json::from_value(value).input(&ctx)?;
    if !has_steps {
        spec.scenario.steps = spec.scenario.dynamics.recommended_steps();
    }
    if let Some(lib) = cfg.library {
        spec.scenario.library = Some(lib);
    }
    if cfg.stridge != StridgeParams::default() {
        spec.scenario.stridge = cfg.stridge;
    }
    spec.scenario.validate().input(&ctx)?;
    if let Some(sw) = &spec.sweep {
        if sw.levels.is_empty() || sw.seeds.is_empty() {
            return Err(Failure::usage(format!(
                "{ctx}: sweep needs levels and seeds"
            )));
        }
        if sw.levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Failure::usage(format!(
                "{ctx}: sweep levels must be finite and non-negative"
            )));
        }
    }
    Ok(spec)
}

pub fn effective_config(spec: &SimulateSpec, cfg: &RunConfig) -> Value {
    let settings = spec.scenario.extraction_settings();
    json!({
        "run": cfg.resolved(settings.library, Some(settings.ds)).to_value(),
        "spec": spec,
    })
}

pub fn run_sweep(spec: &SimulateSpec, cfg: &RunConfig) -> CliResult<(SweepSpec, ShiftSweep<f64>)> {
    let sw = spec
        .sweep
        .clone()
        .ok_or_else(|| Failure::usage("spec has no `sweep` section"))?;
    let sweep = shift_sweep::<f64>(
        &spec.scenario,
        &sw.levels,
        &sw.seeds,
        spec.features,
        &cfg.calibration_options(),
    )?;
    Ok((sw, sweep))
}

pub fn run(args: &SimulateArgs, cfg: &RunConfig) -> CliResult<()> {
    let spec = read_spec(&args.spec, cfg)?;
    std::fs::create_dir_all(&args.out_dir)
        .output(&format!("creating {}", args.out_dir.display()))?;
    let config = effective_config(&spec, cfg);
    if spec.sweep.is_some() {
        return sweep(args, &spec, cfg, config);
    }

    let sc = &spec.scenario;
    let pair = generate_scenario::<f64>(sc)?;
    let settings = sc.extraction_settings();
    let dir = &args.out_dir;
    io::write_trajectories(&dir.join("source.trajectories.csv"), &pair.source, sc.ds())?;
    io::write_trajectories(&dir.join("target.trajectories.csv"), &pair.target, sc.ds())?;
    if !pair.source.knowledge_columns.is_empty() {
        io::write_feature_csv(
            &dir.join("source.knowledge.csv"),
            &pair.source.knowledge_matrix()?,
            None,
        )?;
        io::write_feature_csv(
            &dir.join("target.knowledge.csv"),
            &pair.target.knowledge_matrix()?,
            None,
        )?;
    }
    let source = domain_features(&pair.source, &settings, spec.features)?;
    let target = domain_features(&pair.target, &settings, spec.features)?;
    io::write_feature_csv(
        &dir.join("source.features.csv"),
        &source.features,
        Some(&source.labels),
    )?;
    io::write_feature_csv(
        &dir.join("target.features.csv"),
        &target.features,
        Some(&target.labels),
    )?;

    let cal = dcb_compute(&source.features, &cfg.calibration_options())?;
    let report = sdcd("target", &target.features, &source.features, &cal)?;
    let accuracy = reference_classifier(
        &source.features,
        &source.labels,
        &target.features,
        &target.labels,
    )?;
    let self_accuracy = reference_classifier(
        &source.features,
        &source.labels,
        &source.features,
        &source.labels,
    )?;
    save_artifact(&cal, config.clone(), &dir.join("calibration.confgap.json"))?;
    save_artifact(&report, config, &dir.join("sdcd.confgap.json"))?;
    log(&format!("wrote domains to {}", dir.display()));

    println!(
        "{:<8} {:>6} {:>8} {:>9}",
        "domain", "rows", "sdcd_%", "accuracy"
    );
    println!(
        "{:<8} {:>6} {:>8} {:>9.3}",
        "source",
        source.features.n_rows(),
        "-",
        self_accuracy
    );
    println!(
        "{:<8} {:>6} {:>8.2} {:>9.3}",
        "target",
        target.features.n_rows(),
        report.sdcd_percent,
        accuracy
    );
    Ok(())
}

fn sweep(
    args: &SimulateArgs,
    spec: &SimulateSpec,
    cfg: &RunConfig,
    config: Value,
) -> CliResult<()> {
    let (sw, result) = run_sweep(spec, cfg)?;
    let table = ShiftSweepTable {
        points: result.points.clone(),
        correlation: result.correlation(),
    };
    save_artifact(
        &table,
        config,
        &args.out_dir.join("shift_sweep.confgap.json"),
    )?;
    io::write_records(
        &args.out_dir.join("shift_sweep.csv"),
        &["seed", "shift_level", "sdcd", "accuracy"],
        table.points.iter().map(|p| {
            vec![
                p.seed.to_string(),
                p.shift_level.to_string(),
                p.sdcd.to_string(),
                p.accuracy.to_string(),
            ]
        }),
    )?;
    let sdcd = result.level_means(&sw.levels, |p| p.sdcd);
    let acc = result.level_means(&sw.levels, |p| p.accuracy);
    println!("{:>8} {:>10} {:>10}", "shift", "mean_sdcd", "mean_acc");
    for ((l, s), a) in sw.levels.iter().zip(&sdcd).zip(&acc) {
        println!("{l:>8.3} {s:>10.2} {a:>10.3}");
    }
    println!("correlation(sdcd, accuracy) {}", opt(table.correlation));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_and_recommended_steps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, r#"{"scenario": {"dynamics": "cubic"}}"#).unwrap();
        let spec = read_spec(&p, &RunConfig::default()).unwrap();
        assert_eq!(spec.scenario.steps, 1001);
        assert_eq!(spec.features, FeatureSource::DataDerived);
        std::fs::write(&p, r#"{"scenario": {"dynamics": "cubic", "steps": 51}}"#).unwrap();
        assert_eq!(
            read_spec(&p, &RunConfig::default()).unwrap().scenario.steps,
            51
        );
    }

    #[test]
    fn malformed_specs_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        for bad in [
            "{",
            r#"{"scenario": {"dynamcs": "cubic"}}"#,
            r#"{"scenario": {"n_samples_per_domain": 1}}"#,
            r#"{"sweep": {"levels": [], "seeds": [0]}}"#,
            r#"{"extra": 1}"#,
        ] {
            std::fs::write(&p, bad).unwrap();
            assert!(
                matches!(read_spec(&p, &RunConfig::default()), Err(Failure::Usage(_))),
                "{bad}"
            );
        }
    }
}
