//! Domain conformal bounds: calibrate an interval over robustness residuals
//! on the source, then score a target by the share of its samples inside.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::divergence::{robustness_excluding, RobustnessConfig, RobustnessSettings};
use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::scalar::{cmp_finite, Scalar};

/// Smallest source size that splits into two halves with a usable spread.
pub const MIN_CALIBRATION_ROWS: usize = 4;
pub const MIN_COVERAGE_ROWS: usize = 12;

/// Which order statistic of the validation residuals becomes `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// `k = ⌈(n_val + 1)(1 − α)⌉`.
    #[default]
    SplitConformal,
    /// `k = ⌈(n_val/2 + 1)(1 − α)⌉`.
    HalfValidation,
}

impl QuantileRule {
    /// 1-based rank, clamped to `[1, n_val]`.
    pub fn k_index(self, n_val: usize, alpha: f64) -> usize {
        let base = match self {
            QuantileRule::SplitConformal => n_val as f64 + 1.0,
            QuantileRule::HalfValidation => n_val as f64 / 2.0 + 1.0,
        };
        // guard against 1.9000000000000001-style rounding pushing ceil up
        let raw = (base * (1.0 - alpha) - 1e-9).ceil();
        (raw.max(1.0) as usize).clamp(1, n_val.max(1))
    }
}

/// How the interval is built around `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalRule {
    /// `[−σ, d]`: every residual is at least `−σ`, so this is the one-sided
    /// conformal region `R ≤ d`.
    #[default]
    UpperQuantile,
    /// `[d − std(R), d + std(R)]`.
    StdBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub alpha: f64,
    pub split_seed: u64,
    pub robustness: RobustnessSettings,
    pub quantile: QuantileRule,
    pub interval: IntervalRule,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            split_seed: 0,
            robustness: RobustnessSettings::default(),
            quantile: QuantileRule::default(),
            interval: IntervalRule::default(),
        }
    }
}

impl CalibrationOptions {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_seed(mut self, split_seed: u64) -> Self {
        self.split_seed = split_seed;
        self
    }
}

/// Calibrated domain conformal bound of one source domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcbCalibration<T> {
    /// Mean leave-one-out robustness over the training half.
    pub sigma: T,
    /// The `k`-th smallest validation residual.
    pub d: T,
    /// Sample standard deviation of the validation residuals.
    pub residual_std: T,
    pub interval_lo: T,
    pub interval_hi: T,
    pub alpha: f64,
    pub k_index: usize,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub quantile: QuantileRule,
    pub interval: IntervalRule,
    pub robustness: RobustnessSettings,
    pub feature_columns: Vec<String>,
    pub source_fingerprint: String,
    /// Zero residual spread or a singular source covariance.
    pub degenerate: bool,
}

impl<T: Scalar> DcbCalibration<T> {
    pub fn contains(&self, residual: T) -> bool {
        self.interval_lo <= residual && residual <= self.interval_hi
    }

    pub fn width(&self) -> T {
        self.interval_hi - self.interval_lo
    }

    /// Short content identifier, used to tie reports to their calibration.
    pub fn reference_id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("calibration serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

/// Seeded split of `0..n` into a training half (gets the extra row when `n`
/// is odd) and a validation half.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n.div_ceil(2);
    let val = idx.split_off(n_train);
    (idx, val)
}

/// Calibrates the bound on `source`.
pub fn dcb_compute<T: Scalar>(
    source: &FeatureMatrix<T>,
    options: &CalibrationOptions,
) -> Result<DcbCalibration<T>> {
    let n = source.n_rows();
    if n < MIN_CALIBRATION_ROWS {
        return Err(Error::InsufficientData {
            needed: MIN_CALIBRATION_ROWS,
            found: n,
        });
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {}",
            options.alpha
        )));
    }
    if source.n_cols() == 0 {
        return Err(Error::invalid("source feature matrix has no columns"));
    }
    let (train_idx, val_idx) = split_indices(n, options.split_seed);
    let rows = source.rows();
    let train = rows.select(Axis(0), &train_idx);
    let val = rows.select(Axis(0), &val_idx);
    let config = options.robustness.fit(train.view())?;

    let loo = (0..train.nrows())
        .map(|i| robustness_excluding(train.row(i), train.view(), Some(i), &config))
        .collect::<Result<Vec<T>>>()?;
    let sigma = loo.iter().copied().sum::<T>() / T::from_usize_lossy(loo.len());

    let mut residuals = val
        .outer_iter()
        .map(|row| Ok(robustness_excluding(row, train.view(), None, &config)? - sigma))
        .collect::<Result<Vec<T>>>()?;
    let n_val = residuals.len();
    let residual_std = sample_std(&residuals);
    residuals.sort_by(cmp_finite);
    let k_index = options.quantile.k_index(n_val, options.alpha);
    let d = residuals[k_index - 1];

    let (interval_lo, interval_hi) = match options.interval {
        IntervalRule::UpperQuantile => ((-sigma).min(d), d),
        IntervalRule::StdBand => (d - residual_std, d + residual_std),
    };
    Ok(DcbCalibration {
        sigma,
        d,
        residual_std,
        interval_lo,
        interval_hi,
        alpha: options.alpha,
        k_index,
        split_seed: options.split_seed,
        n_train: train_idx.len(),
        n_val,
        quantile: options.quantile,
        interval: options.interval,
        robustness: options.robustness,
        feature_columns: source.columns().to_vec(),
        source_fingerprint: source.fingerprint(),
        degenerate: residual_std == T::zero() || config.metric_model.degenerate,
    })
}

fn sample_std<T: Scalar>(values: &[T]) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let ss = values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>();
    (ss / (n - T::one())).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResidual<T> {
    pub id: String,
    pub residual: T,
    pub in_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdcdReport<T> {
    pub target_name: String,
    pub sdcd_percent: T,
    pub residuals: Vec<SampleResidual<T>>,
    pub calibration_ref: String,
}

impl<T: Scalar> SdcdReport<T> {
    pub fn n_in_bounds(&self) -> usize {
        self.residuals.iter().filter(|r| r.in_bounds).count()
    }
}

/// A calibration together with the metric fitted on its full source, ready
/// to score any number of targets.
#[derive(Debug, Clone)]
pub struct DcbScorer<'a, T> {
    calibration: &'a DcbCalibration<T>,
    source: Array2<T>,
    config: RobustnessConfig<T>,
    calibration_ref: String,
}

impl<'a, T: Scalar> DcbScorer<'a, T> {
    pub fn new(source: &FeatureMatrix<T>, calibration: &'a DcbCalibration<T>) -> Result<Self> {
        source.check_columns(&calibration.feature_columns)?;
        let config = calibration.robustness.fit(source.rows().view())?;
        Ok(Self {
            calibration,
            source: source.rows().clone(),
            config,
            calibration_ref: calibration.reference_id(),
        })
    }

    pub fn calibration(&self) -> &DcbCalibration<T> {
        self.calibration
    }

    pub fn residual(&self, x: ArrayView1<T>) -> Result<T> {
        Ok(
            robustness_excluding(x, self.source.view(), None, &self.config)?
                - self.calibration.sigma,
        )
    }

    fn residuals(&self, rows: ArrayView2<T>) -> Result<Vec<T>> {
        let out: Vec<Result<T>> = (0..rows.nrows())
            .into_par_iter()
            .map(|i| self.residual(rows.row(i)))
            .collect();
        out.into_iter().collect()
    }

    pub fn score(&self, target_name: &str, target: &FeatureMatrix<T>) -> Result<SdcdReport<T>> {
        target.check_columns(&self.calibration.feature_columns)?;
        if target.n_rows() == 0 {
            return Err(Error::invalid(format!(
                "target `{target_name}` has no rows"
            )));
        }
        let residuals: Vec<SampleResidual<T>> = self
            .residuals(target.rows().view())?
            .into_iter()
            .zip(target.ids())
            .map(|(residual, id)| SampleResidual {
                id: id.clone(),
                residual,
                in_bounds: self.calibration.contains(residual),
            })
            .collect();
        let inside = residuals.iter().filter(|r| r.in_bounds).count();
        Ok(SdcdReport {
            target_name: target_name.to_string(),
            sdcd_percent: percent(inside, residuals.len()),
            residuals,
            calibration_ref: self.calibration_ref.clone(),
        })
    }

    /// Fraction in `[0, 1]` of `rows` whose residual falls in the bound.
    pub fn in_bounds_rate(&self, rows: ArrayView2<T>) -> Result<f64> {
        let res = self.residuals(rows)?;
        let inside = res
            .iter()
            .filter(|r| self.calibration.contains(**r))
            .count();
        Ok(inside as f64 / res.len().max(1) as f64)
    }
}

fn percent<T: Scalar>(inside: usize, total: usize) -> T {
    if total == 0 {
        return T::zero();
    }
    T::lit(100.0) * T::from_usize_lossy(inside) / T::from_usize_lossy(total)
}

/// Scores `target` against the bound calibrated on `source`.
pub fn sdcd<T: Scalar>(
    target_name: &str,
    target: &FeatureMatrix<T>,
    source: &FeatureMatrix<T>,
    calibration: &DcbCalibration<T>,
) -> Result<SdcdReport<T>> {
    DcbScorer::new(source, calibration)?.score(target_name, target)
}

/// SDCD of `target` translated by `t · direction` for each `t` in `steps`.
pub fn ray_sweep<T: Scalar>(
    scorer: &DcbScorer<'_, T>,
    target: &FeatureMatrix<T>,
    direction: ArrayView1<T>,
    steps: &[T],
) -> Result<Vec<RaySweepStep<T>>> {
    if direction.len() != target.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: target.n_cols(),
            found: direction.len(),
        });
    }
    steps
        .iter()
        .map(|&t| {
            let shift: Array1<T> = direction.mapv(|v| v * t);
            let moved = target.rows() + &shift;
            let residuals = scorer.residuals(moved.view())?;
            let inside = residuals
                .iter()
                .filter(|r| scorer.calibration.contains(**r))
                .count();
            Ok(RaySweepStep {
                t,
                sdcd_percent: percent(inside, residuals.len()),
                residuals,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaySweepStep<T> {
    pub t: T,
    pub sdcd_percent: T,
    pub residuals: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub mean: f64,
    pub per_trial: Vec<f64>,
}

/// Empirical coverage on exchangeable data: each trial calibrates on a random
/// two thirds of the rows and scores the remaining third.
pub fn coverage_check<T: Scalar>(
    source: &FeatureMatrix<T>,
    n_trials: usize,
    seed: u64,
    options: &CalibrationOptions,
) -> Result<CoverageResult> {
    let n = source.n_rows();
    if n < MIN_COVERAGE_ROWS {
        return Err(Error::InsufficientData {
            needed: MIN_COVERAGE_ROWS,
            found: n,
        });
    }
    let n_cal = n - n / 3;
    run_trials(n_trials, seed, |rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let held = idx.split_off(n_cal);
        let cal = source.select_rows(&idx);
        let calibration = dcb_compute(&cal, &options.with_seed(rng.next_u64()))?;
        let scorer = DcbScorer::new(&cal, &calibration)?;
        scorer.in_bounds_rate(source.rows().select(Axis(0), &held).view())
    })
}

/// Like [`coverage_check`] but every trial scores all of `heldout`, which
/// need not come from the source distribution.
pub fn coverage_against<T: Scalar>(
    source: &FeatureMatrix<T>,
    heldout: &FeatureMatrix<T>,
    n_trials: usize,
    seed: u64,
    options: &CalibrationOptions,
) -> Result<CoverageResult> {
    let n = source.n_rows();
    if n < MIN_COVERAGE_ROWS {
        return Err(Error::InsufficientData {
            needed: MIN_COVERAGE_ROWS,
            found: n,
        });
    }
    if heldout.n_rows() == 0 {
        return Err(Error::invalid("held-out set is empty"));
    }
    heldout.check_columns(source.columns())?;
    let n_cal = n - n / 3;
    run_trials(n_trials, seed, |rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx.truncate(n_cal);
        let cal = source.select_rows(&idx);
        let calibration = dcb_compute(&cal, &options.with_seed(rng.next_u64()))?;
        DcbScorer::new(&cal, &calibration)?.in_bounds_rate(heldout.rows().view())
    })
}

fn run_trials(
    n_trials: usize,
    seed: u64,
    trial: impl Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
) -> Result<CoverageResult> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials must be positive"));
    }
    let per_trial = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            trial(&mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CoverageResult {
        mean: per_trial.iter().sum::<f64>() / n_trials as f64,
        per_trial,
    })
}
