//! Sequentially thresholded ridge regression.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StridgeParams {
    pub threshold: f64,
    pub ridge_lambda: f64,
    pub max_iter: usize,
}

impl Default for StridgeParams {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            ridge_lambda: 1e-5,
            max_iter: 20,
        }
    }
}

impl StridgeParams {
    pub fn new(threshold: f64, ridge_lambda: f64, max_iter: usize) -> Self {
        Self {
            threshold,
            ridge_lambda,
            max_iter,
        }
    }
}

/// Sparse coefficients and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFit<T> {
    /// `S x L`: one row of library coefficients per state variable.
    pub xi: Array2<T>,
    pub threshold: T,
    pub ridge_lambda: T,
    /// Largest iteration count over the state variables.
    pub n_iterations: usize,
    /// Every state variable reached a stable support before `max_iter`.
    pub converged: bool,
    /// Some restricted system was singular and was solved via the eigen fallback.
    pub used_fallback: bool,
    /// Fewer rows than library terms.
    pub underdetermined: bool,
    /// Sum of squared residuals of the final fit, over all state variables.
    pub residual_ss: T,
}

impl<T: Scalar> SparseFit<T> {
    pub fn support(&self, state: usize) -> Vec<usize> {
        self.xi
            .row(state)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(j, _)| j)
            .collect()
    }
}

/// Fits `derivatives ≈ design · ξᵀ` with sparse `ξ`.
///
/// Per state variable: solve `(ΘᵀΘ + λI) ξ = Θᵀẋ`, zero coefficients below
/// `threshold`, re-solve on the surviving support, repeat until the support
/// stops changing or `max_iter` re-solves have run.
pub fn stridge<T: Scalar>(
    design: ArrayView2<T>,
    derivatives: ArrayView2<T>,
    params: &StridgeParams,
) -> Result<SparseFit<T>> {
    let (rows, n_terms) = design.dim();
    if derivatives.nrows() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: derivatives.nrows(),
        });
    }
    if n_terms == 0 {
        return Err(Error::invalid("empty candidate library"));
    }
    if !(params.threshold.is_finite() && params.threshold >= 0.0) {
        return Err(Error::invalid("threshold must be finite and non-negative"));
    }
    if !(params.ridge_lambda.is_finite() && params.ridge_lambda >= 0.0) {
        return Err(Error::invalid(
            "ridge_lambda must be finite and non-negative",
        ));
    }
    for (name, m) in [("design", design), ("derivatives", derivatives)] {
        if let Some(r) = m
            .outer_iter()
            .position(|row| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                context: name.into(),
                row: r,
            });
        }
    }

    let threshold = T::lit(params.threshold);
    let lambda = T::lit(params.ridge_lambda);
    let gram = design.t().dot(&design);
    let rhs_all = design.t().dot(&derivatives);

    let n_states = derivatives.ncols();
    let mut xi = Array2::<T>::zeros((n_states, n_terms));
    let mut n_iterations = 0;
    let mut converged = true;
    let mut used_fallback = false;

    for state in 0..n_states {
        let rhs = rhs_all.column(state);
        let mut active = vec![true; n_terms];
        let (mut coef, fb) = ridge_on_support(&gram, rhs.view(), &active, lambda);
        used_fallback |= fb;
        let mut iters = 0;
        let mut stable = false;
        while iters < params.max_iter.max(1) {
            iters += 1;
            let next: Vec<bool> = active
                .iter()
                .zip(coef.iter())
                .map(|(&a, c)| a && c.abs() >= threshold)
                .collect();
            if next == active {
                stable = true;
                break;
            }
            active = next;
            if !active.iter().any(|&a| a) {
                coef.fill(T::zero());
                stable = true;
                break;
            }
            if iters == params.max_iter.max(1) {
                break;
            }
            let (c, fb) = ridge_on_support(&gram, rhs.view(), &active, lambda);
            used_fallback |= fb;
            coef = c;
        }
        // Keep |ξ| ∈ {0} ∪ [threshold, ∞) even if the loop ran out.
        for (c, &a) in coef.iter_mut().zip(&active) {
            if !a || c.abs() < threshold {
                *c = T::zero();
            }
        }
        converged &= stable;
        n_iterations = n_iterations.max(iters);
        xi.row_mut(state).assign(&coef);
    }

    let fitted = design.dot(&xi.t());
    let resid = &derivatives - &fitted;
    let residual_ss = resid.iter().map(|v| *v * *v).sum::<T>();
    if !residual_ss.is_finite() {
        return Err(Error::NonFinite {
            context: "stridge residual".into(),
            row: 0,
        });
    }
    Ok(SparseFit {
        xi,
        threshold,
        ridge_lambda: lambda,
        n_iterations,
        converged,
        used_fallback,
        underdetermined: rows < n_terms,
        residual_ss,
    })
}

fn ridge_on_support<T: Scalar>(
    gram: &Array2<T>,
    rhs: ndarray::ArrayView1<T>,
    active: &[bool],
    lambda: T,
) -> (Array1<T>, bool) {
    let idx: Vec<usize> = active
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(i, _)| i)
        .collect();
    let mut sub = gram.select(Axis(0), &idx).select(Axis(1), &idx);
    for i in 0..idx.len() {
        sub[[i, i]] = sub[[i, i]] + lambda;
    }
    let b = rhs.select(Axis(0), &idx);
    let sol = linalg::solve_spd(sub.view(), b.view());
    let mut full = Array1::<T>::zeros(active.len());
    for (k, &i) in idx.iter().enumerate() {
        full[i] = sol.x[k];
    }
    (full, sol.used_fallback)
}

/// Finite-difference derivative of each column with respect to the traversal
/// parameter: central differences inside, one-sided first order at the ends.
pub fn estimate_derivatives<T: Scalar>(trajectory: ArrayView2<T>, ds: T) -> Result<Array2<T>> {
    if !(ds > T::zero()) || !ds.is_finite() {
        return Err(Error::invalid("ds must be positive and finite"));
    }
    let steps = trajectory.nrows();
    if steps < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: steps,
        });
    }
    let mut out = Array2::<T>::zeros(trajectory.dim());
    let two_ds = ds + ds;
    if steps > 2 {
        let ahead = trajectory.slice(s![2.., ..]);
        let behind = trajectory.slice(s![..steps - 2, ..]);
        let central = (&ahead - &behind).mapv(|v| v / two_ds);
        out.slice_mut(s![1..steps - 1, ..]).assign(&central);
    }
    let first = (&trajectory.row(1) - &trajectory.row(0)).mapv(|v| v / ds);
    let last = (&trajectory.row(steps - 1) - &trajectory.row(steps - 2)).mapv(|v| v / ds);
    out.row_mut(0).assign(&first);
    out.row_mut(steps - 1).assign(&last);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn derivative_of_ramp() {
        let d = estimate_derivatives(array![[0.0], [1.0], [2.0], [3.0]].view(), 1.0).unwrap();
        assert_eq!(d, array![[1.0], [1.0], [1.0], [1.0]]);
    }

    #[test]
    fn derivative_of_constant() {
        let d = estimate_derivatives(Array2::from_elem((5, 2), 3.5).view(), 0.1).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn derivative_of_square() {
        // x(s) = s², analytic derivative 2s = 1 at s = 0.5
        let ds = 0.01;
        let traj = Array2::from_shape_fn((101, 1), |(i, _)| (i as f64 * ds).powi(2));
        let d = estimate_derivatives(traj.view(), ds).unwrap();
        assert_abs_diff_eq!(d[[50, 0]], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn derivative_rejects_bad_step() {
        let t = array![[0.0], [1.0], [2.0]];
        assert!(estimate_derivatives(t.view(), 0.0).is_err());
        assert!(estimate_derivatives(t.view(), -1.0).is_err());
        assert!(estimate_derivatives(array![[0.0]].view(), 1.0).is_err());
    }

    #[test]
    fn zero_derivatives_prune_everything() {
        let design = array![
            [1.0, 0.5, 0.25],
            [1.0, 1.0, 1.0],
            [1.0, 2.0, 4.0],
            [1.0, 3.0, 9.0]
        ];
        let deriv = Array2::<f64>::zeros((4, 1));
        let fit = stridge(design.view(), deriv.view(), &StridgeParams::default()).unwrap();
        assert!(fit.xi.iter().all(|&v| v == 0.0));
        assert_eq!(fit.n_iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn duplicate_columns_use_fallback() {
        let design = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let deriv = array![[2.0], [4.0], [6.0]];
        let fit = stridge(
            design.view(),
            deriv.view(),
            &StridgeParams::new(0.0, 0.0, 5),
        )
        .unwrap();
        assert!(fit.used_fallback);
        assert_abs_diff_eq!(fit.xi[[0, 0]] + fit.xi[[0, 1]], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_params() {
        let design = array![[1.0], [2.0]];
        let deriv = array![[1.0], [2.0]];
        assert!(stridge(
            design.view(),
            deriv.view(),
            &StridgeParams::new(f64::NAN, 0.0, 5)
        )
        .is_err());
        assert!(stridge(
            design.view(),
            deriv.view(),
            &StridgeParams::new(0.1, -1.0, 5)
        )
        .is_err());
        assert!(stridge(
            design.view(),
            array![[1.0]].view(),
            &StridgeParams::default()
        )
        .is_err());
    }

    #[test]
    fn flags_underdetermined() {
        let design = array![[1.0, 2.0, 3.0]];
        let deriv = array![[1.0]];
        let fit = stridge(design.view(), deriv.view(), &StridgeParams::default()).unwrap();
        assert!(fit.underdetermined);
    }
}
