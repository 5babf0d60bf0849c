use std::path::PathBuf;

use clap::{Args, ValueEnum};
use confgap::{ablation_search, DomainPair, Strategy};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::save_artifact;
use crate::config::RunConfig;
use crate::failure::{CliResult, InputContext};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Greedy,
    Exhaustive,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::GreedySequential,
            StrategyArg::Exhaustive => Strategy::ExhaustiveSmall,
        }
    }
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// JSON list of `{"source": path, "target": path}` (optionally `"name"`).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Comma-separated columns the search may drop.
    #[arg(long, value_delimiter = ',')]
    pub removable: Vec<String>,
    #[arg(long, value_enum, default_value = "greedy")]
    pub strategy: StrategyArg,
    /// Ablation trace artifact to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntry {
    #[serde(default)]
    name: Option<String>,
    source: PathBuf,
    target: PathBuf,
}

pub fn run(args: &RefineArgs, cfg: &RunConfig) -> CliResult<()> {
    let ctx = format!("reading {}", args.pairs.display());
    let text = std::fs::read_to_string(&args.pairs).input(&ctx)?;
    let entries: Vec<PairEntry> = serde_json::from_str(&text).input(&ctx)?;
    let base = args.pairs.parent().map(PathBuf::from).unwrap_or_default();
    let mut pairs = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let source = io::read_features(&base.join(&e.source))?.features;
        let target = io::read_features(&base.join(&e.target))?.features;
        let name = e.name.clone().unwrap_or_else(|| format!("pair-{i}"));
        pairs.push(DomainPair::new(name, source, target));
    }
    let trace = ablation_search(
        &pairs,
        &args.removable,
        &cfg.calibration_options(),
        args.strategy.into(),
    )?;
    let config = json!({
        "run": cfg.to_value(),
        "strategy": trace.strategy,
        "removable": args.removable,
        "pairs": entries,
    });
    save_artifact(&trace, config, &args.out)?;

    println!(
        "{:>4}  {:<16} {:<32} {:>9}  committed",
        "step", "candidate", "removed", "avg_sdcd"
    );
    for (i, s) in trace.steps.iter().enumerate() {
        println!(
            "{:>4}  {:<16} {:<32} {:>9.3}  {}",
            i,
            s.candidate.as_deref().unwrap_or("-"),
            if s.removed.is_empty() {
                "-".to_string()
            } else {
                s.removed.join(",")
            },
            s.avg_sdcd,
            if s.committed { "yes" } else { "" }
        );
    }
    println!(
        "best: removed [{}]  avg_sdcd {:.3}  baseline {:.3}",
        trace.best_removed.join(","),
        trace.best_avg_sdcd,
        trace.baseline_avg_sdcd
    );
    Ok(())
}
