//! Knowledge/data fusion and SDCD-guided column ablation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{concatenate, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{dcb_compute, sdcd, CalibrationOptions};
use crate::domain::{FeatureMatrix, FeatureSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_EXHAUSTIVE_COLUMNS: usize = 12;

/// Concatenates data-derived and knowledge columns, data first. Knowledge
/// rows are matched to data rows by sample id.
pub fn fuse<T: Scalar>(
    data: &FeatureMatrix<T>,
    knowledge: &FeatureMatrix<T>,
) -> Result<FeatureMatrix<T>> {
    if data.n_rows() != knowledge.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: data.n_rows(),
            found: knowledge.n_rows(),
        });
    }
    let by_id: HashMap<&str, usize> = knowledge
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let order = data
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("sample `{id}` has no knowledge row")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let aligned = knowledge.rows().select(Axis(0), &order);
    let rows = concatenate(Axis(1), &[data.rows().view(), aligned.view()])
        .map_err(|e| Error::invalid(e.to_string()))?;
    let columns = data
        .columns()
        .iter()
        .chain(knowledge.columns())
        .cloned()
        .collect();
    FeatureMatrix::new(columns, data.ids().to_vec(), rows, FeatureSource::Fused)
}

/// A named source/target pair scored during ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair<T> {
    pub name: String,
    pub source: FeatureMatrix<T>,
    pub target: FeatureMatrix<T>,
}

impl<T> DomainPair<T> {
    pub fn new(
        name: impl Into<String>,
        source: FeatureMatrix<T>,
        target: FeatureMatrix<T>,
    ) -> Self {
        Self {
            name: name.into(),
            source,
            target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    GreedySequential,
    ExhaustiveSmall,
}

/// One evaluated column subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationStep {
    /// Column whose removal this step tried; `None` for the baseline and for
    /// exhaustive evaluations.
    pub candidate: Option<String>,
    /// Every column removed in this evaluation.
    pub removed: Vec<String>,
    pub avg_sdcd: f64,
    pub per_pair_sdcd: BTreeMap<String, f64>,
    pub committed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTrace {
    pub strategy: Strategy,
    pub split_seed: u64,
    pub steps: Vec<AblationStep>,
    pub best_subset: Vec<String>,
    pub best_removed: Vec<String>,
    pub best_avg_sdcd: f64,
    pub baseline_avg_sdcd: f64,
}

/// Searches for the column subset with the highest mean SDCD over `pairs`.
///
/// Greedy mode removes one column per round, taking the best strict
/// improvement (ties go to the lexicographically first name). Exhaustive
/// mode scores every subset of `removable`.
pub fn ablation_search<T: Scalar>(
    pairs: &[DomainPair<T>],
    removable: &[String],
    options: &CalibrationOptions,
    strategy: Strategy,
) -> Result<AblationTrace> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("ablation needs at least one domain pair"))?;
    let columns = first.source.columns().to_vec();
    let mut names = BTreeSet::new();
    for pair in pairs {
        pair.source.check_columns(&columns)?;
        pair.target.check_columns(&columns)?;
        if !names.insert(pair.name.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate pair name `{}`",
                pair.name
            )));
        }
    }
    let removable: Vec<String> = removable
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(missing) = removable.iter().find(|c| !columns.contains(c)) {
        return Err(Error::invalid(format!(
            "removable column `{missing}` is not a feature column"
        )));
    }

    let evaluate = |removed: &[String], candidate: Option<String>| -> Result<AblationStep> {
        let keep: Vec<String> = columns
            .iter()
            .filter(|c| !removed.contains(c))
            .cloned()
            .collect();
        let mut per_pair = BTreeMap::new();
        for pair in pairs {
            let src = pair.source.select_columns(&keep)?;
            let tgt = pair.target.select_columns(&keep)?;
            let cal = dcb_compute(&src, options)?;
            let report = sdcd(&pair.name, &tgt, &src, &cal)?;
            per_pair.insert(pair.name.clone(), report.sdcd_percent.as_f64());
        }
        let avg = per_pair.values().sum::<f64>() / per_pair.len() as f64;
        Ok(AblationStep {
            candidate,
            removed: removed.to_vec(),
            avg_sdcd: avg,
            per_pair_sdcd: per_pair,
            committed: false,
        })
    };

    let mut baseline = evaluate(&[], None)?;
    baseline.committed = true;
    let baseline_avg = baseline.avg_sdcd;
    let mut steps = vec![baseline];
    let mut best_removed: Vec<String> = Vec::new();
    let mut best_avg = baseline_avg;

    match strategy {
        Strategy::GreedySequential => loop {
            let candidates: Vec<&String> = removable
                .iter()
                .filter(|c| !best_removed.contains(c))
                .filter(|_| columns.len() - best_removed.len() > 1)
                .collect();
            if candidates.is_empty() {
                break;
            }
            let round = candidates
                .par_iter()
                .map(|c| {
                    let mut removed = best_removed.clone();
                    removed.push((*c).clone());
                    evaluate(&removed, Some((*c).clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut pick: Option<usize> = None;
            for (i, step) in round.iter().enumerate() {
                if pick.is_none_or(|p| step.avg_sdcd > round[p].avg_sdcd) {
                    pick = Some(i);
                }
            }
            let offset = steps.len();
            steps.extend(round);
            match pick {
                Some(p) if steps[offset + p].avg_sdcd > best_avg => {
                    steps[offset + p].committed = true;
                    best_avg = steps[offset + p].avg_sdcd;
                    best_removed = steps[offset + p].removed.clone();
                }
                _ => break,
            }
        },
        Strategy::ExhaustiveSmall => {
            if removable.len() > MAX_EXHAUSTIVE_COLUMNS {
                return Err(Error::invalid(format!(
                    "exhaustive search supports at most {MAX_EXHAUSTIVE_COLUMNS} removable columns, got {}",
                    removable.len()
                )));
            }
            let mut subsets: Vec<Vec<String>> = (1u32..(1 << removable.len()))
                .map(|mask| {
                    removable
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, c)| c.clone())
                        .collect::<Vec<_>>()
                })
                .filter(|s| s.len() < columns.len())
                .collect();
            subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
            let evals = subsets
                .par_iter()
                .map(|s| evaluate(s, None))
                .collect::<Result<Vec<_>>>()?;
            let mut best_idx = None;
            for (i, step) in evals.iter().enumerate() {
                if step.avg_sdcd > best_avg {
                    best_avg = step.avg_sdcd;
                    best_idx = Some(i);
                }
            }
            let offset = steps.len();
            steps.extend(evals);
            if let Some(i) = best_idx {
                steps[offset + i].committed = true;
                steps[0].committed = false;
                best_removed = steps[offset + i].removed.clone();
            }
        }
    }

    let best_subset = columns
        .iter()
        .filter(|c| !best_removed.contains(c))
        .cloned()
        .collect();
    Ok(AblationTrace {
        strategy,
        split_seed: options.split_seed,
        steps,
        best_subset,
        best_removed,
        best_avg_sdcd: best_avg,
        baseline_avg_sdcd: baseline_avg,
    })
}
