//! Gaussian fitting and the distance machinery built on it: KL divergence
//! between Gaussians, Mahalanobis distance, and the robustness score of a
//! feature vector against a reference set.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Diagonal regularizer added to a covariance before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum RidgeEps {
    /// `scale * trace(Σ) / F`, or `scale` itself when the trace is zero.
    Relative(f64),
    Absolute(f64),
}

impl Default for RidgeEps {
    fn default() -> Self {
        RidgeEps::Relative(1e-8)
    }
}

impl RidgeEps {
    pub fn resolve<T: Scalar>(&self, covariance: ArrayView2<T>) -> T {
        match *self {
            RidgeEps::Absolute(v) => T::lit(v),
            RidgeEps::Relative(scale) => {
                let f = covariance.nrows();
                let trace: T = covariance.diag().iter().copied().sum();
                if f == 0 || trace <= T::zero() {
                    T::lit(scale)
                } else {
                    T::lit(scale) * trace / T::from_usize_lossy(f)
                }
            }
        }
    }
}

/// Mean, covariance and regularized precision of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel<T> {
    pub mean: Array1<T>,
    pub covariance: Array2<T>,
    /// `(Σ + ridge_eps·I)⁻¹`
    pub precision: Array2<T>,
    pub ridge_eps: T,
    /// Set when Σ itself is singular (zero-variance or collinear features).
    pub degenerate: bool,
}

impl<T: Scalar> GaussianModel<T> {
    /// Builds a model from given moments, inverting `Σ + ridge_eps·I`.
    pub fn new(mean: Array1<T>, covariance: Array2<T>, ridge_eps: T) -> Result<Self> {
        let f = mean.len();
        if covariance.nrows() != f || covariance.ncols() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                found: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "gaussian moments".into(),
                row: 0,
            });
        }
        let degenerate = linalg::cholesky(covariance.view()).is_none();
        let regularized = regularize(covariance.view(), ridge_eps);
        let precision = match linalg::spd_inverse(regularized.view()) {
            Ok(p) => p,
            Err(_) if ridge_eps > T::zero() => {
                linalg::symmetric_pinv(regularized.view(), T::epsilon())
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            mean,
            covariance,
            precision,
            ridge_eps,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Σ + ridge_eps·I`
    pub fn regularized_covariance(&self) -> Array2<T> {
        regularize(self.covariance.view(), self.ridge_eps)
    }
}

fn regularize<T: Scalar>(cov: ArrayView2<T>, eps: T) -> Array2<T> {
    let mut out = cov.to_owned();
    for i in 0..out.nrows() {
        out[[i, i]] = out[[i, i]] + eps;
    }
    out
}

/// Fits mean and unbiased (N−1) covariance to the rows of `features`.
pub fn fit_gaussian<T: Scalar>(
    features: &FeatureMatrix<T>,
    ridge: RidgeEps,
) -> Result<GaussianModel<T>> {
    fit_gaussian_rows(features.rows().view(), ridge)
}

pub fn fit_gaussian_rows<T: Scalar>(
    rows: ArrayView2<T>,
    ridge: RidgeEps,
) -> Result<GaussianModel<T>> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: n,
        });
    }
    if rows.ncols() == 0 {
        return Err(Error::invalid(
            "cannot fit a distribution with zero features",
        ));
    }
    if let Some(r) = rows
        .axis_iter(Axis(0))
        .position(|row| row.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite {
            context: "features".into(),
            row: r,
        });
    }
    let mean = rows.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &rows - &mean;
    let mut cov = centered.t().dot(&centered) / T::from_usize_lossy(n - 1);
    // exact symmetry
    let f = cov.nrows();
    for i in 0..f {
        for j in (i + 1)..f {
            let m = (cov[[i, j]] + cov[[j, i]]) * T::lit(0.5);
            cov[[i, j]] = m;
            cov[[j, i]] = m;
        }
    }
    let eps = ridge.resolve(cov.view());
    GaussianModel::new(mean, cov, eps)
}

/// KL divergence `d_k(P|R)` between two Gaussians, using each model's
/// regularized covariance.
pub fn kl_divergence<T: Scalar>(p: &GaussianModel<T>, r: &GaussianModel<T>) -> Result<T> {
    let k = p.dim();
    if r.dim() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: r.dim(),
        });
    }
    let cov_p = p.regularized_covariance();
    let cov_r = r.regularized_covariance();
    let logdet_p = linalg::log_det_spd(cov_p.view())?;
    let logdet_r = linalg::log_det_spd(cov_r.view())?;
    let prec_r = linalg::spd_inverse(cov_r.view())?;
    let trace: T = (0..k)
        .map(|i| (0..k).map(|j| prec_r[[i, j]] * cov_p[[j, i]]).sum::<T>())
        .sum();
    let diff = &r.mean - &p.mean;
    let maha = linalg::quad_form(prec_r.view(), diff.view());
    let kl = T::lit(0.5) * (logdet_r - logdet_p - T::from_usize_lossy(k) + trace + maha);
    // roundoff can leave a tiny negative value for identical inputs
    Ok(kl.max(T::zero()))
}

/// Mahalanobis distance of `x` from `model`, using the regularized precision.
pub fn mahalanobis<T: Scalar>(x: ArrayView1<T>, model: &GaussianModel<T>) -> Result<T> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    let diff = &x - &model.mean;
    Ok(metric_norm(model.precision.view(), diff.view()))
}

fn metric_norm<T: Scalar>(metric: ArrayView2<T>, v: ArrayView1<T>) -> T {
    linalg::quad_form(metric, v).max(T::zero()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessVariant {
    /// Mean Mahalanobis length of `x − k_j` over every reference row `k_j`.
    PairwiseMean,
    /// Mahalanobis distance of `x` from the reference mean.
    #[default]
    DistributionDirect,
}

/// A robustness variant paired with the metric tensor it measures in.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig<T> {
    pub variant: RobustnessVariant,
    /// Supplies the precision used as the metric tensor.
    pub metric_model: GaussianModel<T>,
}

impl<T: Scalar> RobustnessConfig<T> {
    pub fn new(variant: RobustnessVariant, metric_model: GaussianModel<T>) -> Self {
        Self {
            variant,
            metric_model,
        }
    }
}

/// Serializable robustness recipe: the variant plus how to regularize the
/// metric fitted on whatever reference set the score is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobustnessSettings {
    pub variant: RobustnessVariant,
    pub ridge_eps: RidgeEps,
}

impl RobustnessSettings {
    pub fn new(variant: RobustnessVariant, ridge_eps: RidgeEps) -> Self {
        Self { variant, ridge_eps }
    }

    /// Fits the metric on `reference`.
    pub fn fit<T: Scalar>(&self, reference: ArrayView2<T>) -> Result<RobustnessConfig<T>> {
        Ok(RobustnessConfig::new(
            self.variant,
            fit_gaussian_rows(reference, self.ridge_eps)?,
        ))
    }
}

/// Robustness ρ of `x` against the rows of `reference`.
///
/// If `x` is itself a row of the reference set, pass the set with that row
/// removed (or use [`robustness_excluding`]).
pub fn robustness<T: Scalar>(
    x: ArrayView1<T>,
    reference: &FeatureMatrix<T>,
    config: &RobustnessConfig<T>,
) -> Result<T> {
    robustness_excluding(x, reference.rows().view(), None, config)
}

/// Robustness against `reference` with an optional row left out.
/// The divisor is the number of rows actually used.
pub fn robustness_excluding<T: Scalar>(
    x: ArrayView1<T>,
    reference: ArrayView2<T>,
    exclude: Option<usize>,
    config: &RobustnessConfig<T>,
) -> Result<T> {
    let f = config.metric_model.dim();
    if x.len() != f || reference.ncols() != f {
        return Err(Error::DimensionMismatch {
            expected: f,
            found: if x.len() != f {
                x.len()
            } else {
                reference.ncols()
            },
        });
    }
    let used = reference.nrows() - usize::from(exclude.is_some_and(|i| i < reference.nrows()));
    if used == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let metric = config.metric_model.precision.view();
    let rows = reference
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(_, r)| r);
    let n = T::from_usize_lossy(used);
    match config.variant {
        RobustnessVariant::PairwiseMean => {
            let mut diff = Array1::<T>::zeros(f);
            let mut total = T::zero();
            for r in rows {
                for k in 0..f {
                    diff[k] = x[k] - r[k];
                }
                total = total + metric_norm(metric, diff.view());
            }
            Ok(total / n)
        }
        RobustnessVariant::DistributionDirect => {
            let mut mean = Array1::<T>::zeros(f);
            for r in rows {
                mean = mean + r;
            }
            mean.mapv_inplace(|v| v / n);
            let diff = &x - &mean;
            Ok(metric_norm(metric, diff.view()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FeatureSource;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn fm(rows: Array2<f64>) -> FeatureMatrix<f64> {
        let cols = (0..rows.ncols()).map(|i| format!("f{i}")).collect();
        FeatureMatrix::with_default_ids(cols, rows, FeatureSource::DataDerived).unwrap()
    }

    #[test]
    fn two_point_fit() {
        let g = fit_gaussian(&fm(array![[0.0], [2.0]]), RidgeEps::Absolute(0.0)).unwrap();
        assert_abs_diff_eq!(g.mean[0], 1.0);
        assert_abs_diff_eq!(g.covariance[[0, 0]], 2.0);
        assert_abs_diff_eq!(g.precision[[0, 0]], 0.5, epsilon = 1e-15);
        assert!(!g.degenerate);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let g = fit_gaussian(
            &fm(array![[3.0, 1.0], [3.0, 1.0], [3.0, 1.0]]),
            RidgeEps::default(),
        )
        .unwrap();
        assert!(g.degenerate);
        assert_eq!(g.covariance, Array2::<f64>::zeros((2, 2)));
        assert_abs_diff_eq!(g.ridge_eps, 1e-8);
        assert_abs_diff_eq!(g.precision[[0, 0]], 1e8, epsilon = 1e-3);
        assert_abs_diff_eq!(g.precision[[0, 1]], 0.0, epsilon = 1e-3);
    }

    #[test]
    fn fit_rejects_short_or_nonfinite() {
        assert!(matches!(
            fit_gaussian(&fm(array![[1.0, 2.0]]), RidgeEps::default()),
            Err(Error::InsufficientData { .. })
        ));
        let rows = array![[1.0, 2.0], [f64::NAN, 0.0]];
        assert!(fit_gaussian_rows(rows.view(), RidgeEps::default()).is_err());
    }

    #[test]
    fn precision_inverts_regularized_covariance() {
        let rows = array![
            [1.0, 2.0, 0.5],
            [2.0, 1.0, 0.1],
            [0.0, 0.5, 0.9],
            [1.5, 1.5, 0.2],
            [0.3, 2.2, 0.7]
        ];
        let g = fit_gaussian(&fm(rows), RidgeEps::default()).unwrap();
        let id = g.precision.dot(&g.regularized_covariance());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(id[[i, j]], want, epsilon = 1e-6);
                assert_abs_diff_eq!(g.covariance[[i, j]], g.covariance[[j, i]], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn kl_hand_values() {
        let p = GaussianModel::new(array![0.0], array![[1.0]], 0.0).unwrap();
        let r1 = GaussianModel::new(array![1.0], array![[1.0]], 0.0).unwrap();
        let r2 = GaussianModel::new(array![0.0], array![[4.0]], 0.0).unwrap();
        assert_abs_diff_eq!(kl_divergence(&p, &r1).unwrap(), 0.5, epsilon = 1e-12);
        let want = 0.5 * (4.0_f64.ln() - 1.0 + 0.25);
        assert_abs_diff_eq!(kl_divergence(&p, &r2).unwrap(), want, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_divergence(&p, &p).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let p = GaussianModel::new(array![0.0], array![[1.0]], 0.0).unwrap();
        let r = GaussianModel::new(array![0.0, 0.0], Array2::eye(2), 0.0).unwrap();
        assert!(matches!(
            kl_divergence(&p, &r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mahalanobis_hand_values() {
        let g = GaussianModel::new(array![1.0, 1.0], array![[4.0, 0.0], [0.0, 1.0]], 0.0).unwrap();
        assert_abs_diff_eq!(
            mahalanobis(array![3.0, 2.0].view(), &g).unwrap(),
            2.0_f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(mahalanobis(array![1.0, 1.0].view(), &g).unwrap(), 0.0);
        assert!(mahalanobis(array![1.0].view(), &g).is_err());
    }

    #[test]
    fn robustness_hand_values() {
        let metric = GaussianModel::new(array![0.0, 0.0], Array2::eye(2), 0.0).unwrap();
        let reference = fm(array![[1.0, 0.0], [0.0, 1.0]]);
        let pw = RobustnessConfig::new(RobustnessVariant::PairwiseMean, metric.clone());
        assert_abs_diff_eq!(
            robustness(array![0.0, 0.0].view(), &reference, &pw).unwrap(),
            1.0
        );

        let copies = fm(array![[2.0, 3.0], [2.0, 3.0]]);
        assert_abs_diff_eq!(
            robustness(array![2.0, 3.0].view(), &copies, &pw).unwrap(),
            0.0
        );

        let dd = RobustnessConfig::new(RobustnessVariant::DistributionDirect, metric);
        assert_abs_diff_eq!(
            robustness(array![0.5, 0.5].view(), &reference, &dd).unwrap(),
            0.0
        );
    }

    #[test]
    fn robustness_excluding_uses_reduced_divisor() {
        let metric = GaussianModel::new(array![0.0], array![[1.0]], 0.0).unwrap();
        let cfg = RobustnessConfig::new(RobustnessVariant::PairwiseMean, metric);
        let rows = array![[0.0], [1.0], [3.0]];
        // x = row 0, others at distance 1 and 3
        let rho = robustness_excluding(rows.row(0), rows.view(), Some(0), &cfg).unwrap();
        assert_abs_diff_eq!(rho, 2.0);
        let single = array![[0.0]];
        assert!(robustness_excluding(single.row(0), single.view(), Some(0), &cfg).is_err());
    }

    #[test]
    fn f32_distances() {
        let g = GaussianModel::new(array![0.0f32, 0.0], Array2::eye(2), 0.0).unwrap();
        let d = mahalanobis(array![3.0f32, 4.0].view(), &g).unwrap();
        assert!((d - 5.0).abs() < 1e-6);
    }
}
