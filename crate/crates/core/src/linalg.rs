//! Small dense symmetric linear algebra: Cholesky with diagonal equilibration,
//! a cyclic Jacobi eigensolver used as the fallback path, and helpers built on them.
//!
//! Sizes here are tiny (feature dimension, candidate-library width), so plain
//! O(n^3) loops over `ndarray` storage are sufficient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky<T: Scalar>(a: ArrayView2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag = diag - l[[j, k]] * l[[j, k]];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Symmetric diagonal scaling `D A D` with `D = diag(1/sqrt(a_ii))`.
/// Zero or negative diagonal entries get unit scale.
fn equilibrate<T: Scalar>(a: ArrayView2<T>) -> (Array2<T>, Array1<T>) {
    let n = a.nrows();
    let d = Array1::from_iter((0..n).map(|i| {
        let v = a[[i, i]];
        if v > T::zero() && v.is_finite() {
            T::one() / v.sqrt()
        } else {
            T::one()
        }
    }));
    let mut scaled = a.to_owned();
    for i in 0..n {
        for j in 0..n {
            scaled[[i, j]] = scaled[[i, j]] * d[i] * d[j];
        }
    }
    (scaled, d)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in ascending order; column `k` of the second
/// value is the eigenvector for eigenvalue `k`.
pub fn symmetric_eigen<T: Scalar>(a: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut scale = T::zero();
        for i in 0..n {
            scale = scale + m[[i, i]] * m[[i, i]];
            for j in (i + 1)..n {
                off = off + m[[i, j]] * m[[i, j]];
            }
        }
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| crate::scalar::cmp_finite(&m[[i, i]], &m[[j, j]]));
    let vals = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::<T>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vecs.column_mut(dst).assign(&v.column(src));
    }
    (vals, vecs)
}

/// Moore-Penrose style inverse of a symmetric matrix through its eigenbasis,
/// discarding eigenvalues below `rel_cutoff * max|λ|`.
pub fn symmetric_pinv<T: Scalar>(a: ArrayView2<T>, rel_cutoff: T) -> Array2<T> {
    let n = a.nrows();
    let (vals, vecs) = symmetric_eigen(a);
    let max_abs = vals.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let cut = max_abs * rel_cutoff;
    let mut out = Array2::<T>::zeros((n, n));
    for k in 0..n {
        let lam = vals[k];
        if lam.abs() <= cut || lam == T::zero() {
            continue;
        }
        let inv = T::one() / lam;
        for i in 0..n {
            let vik = vecs[[i, k]] * inv;
            for j in 0..n {
                out[[i, j]] = out[[i, j]] + vik * vecs[[j, k]];
            }
        }
    }
    out
}

/// Result of a symmetric positive (semi)definite solve.
#[derive(Debug, Clone)]
pub struct SpdSolution<T> {
    pub x: Array1<T>,
    /// True when Cholesky failed and the eigen-decomposition path produced `x`.
    pub used_fallback: bool,
}

/// Solves `A x = b` for symmetric positive semidefinite `A`.
///
/// Tries an equilibrated Cholesky factorization first; when that fails the
/// system is solved through the eigenbasis with near-zero modes dropped.
pub fn solve_spd<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> SpdSolution<T> {
    let (scaled, d) = equilibrate(a);
    let rhs = &b * &d;
    if let Some(l) = cholesky(scaled.view()) {
        let y = cholesky_solve(&l, rhs.view());
        let x = &y * &d;
        if x.iter().all(|v| v.is_finite()) {
            return SpdSolution {
                x,
                used_fallback: false,
            };
        }
    }
    let cutoff = T::epsilon() * T::from_usize_lossy(a.nrows().max(1)) * T::lit(10.0);
    let pinv = symmetric_pinv(scaled.view(), cutoff);
    let y = pinv.dot(&rhs);
    SpdSolution {
        x: &y * &d,
        used_fallback: true,
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<T: Scalar>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    let (scaled, d) = equilibrate(a);
    let l = cholesky(scaled.view()).ok_or(Error::NotPositiveDefinite)?;
    let mut inv = Array2::<T>::zeros((n, n));
    let mut e = Array1::<T>::zeros(n);
    for j in 0..n {
        e.fill(T::zero());
        e[j] = T::one();
        let col = cholesky_solve(&l, e.view());
        inv.column_mut(j).assign(&col);
    }
    for i in 0..n {
        for j in 0..n {
            inv[[i, j]] = inv[[i, j]] * d[i] * d[j];
        }
    }
    // symmetrize
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (inv[[i, j]] + inv[[j, i]]) * T::lit(0.5);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    Ok(inv)
}

/// `ln det A` for symmetric positive definite `A`.
pub fn log_det_spd<T: Scalar>(a: ArrayView2<T>) -> Result<T> {
    let (scaled, d) = equilibrate(a);
    let l = cholesky(scaled.view()).ok_or(Error::NotPositiveDefinite)?;
    let two = T::lit(2.0);
    let mut acc = T::zero();
    for i in 0..l.nrows() {
        acc = acc + two * l[[i, i]].ln() - two * d[i].ln();
    }
    Ok(acc)
}

/// `vᵀ M v`.
pub fn quad_form<T: Scalar>(m: ArrayView2<T>, v: ArrayView1<T>) -> T {
    let n = v.len();
    let mut acc = T::zero();
    for i in 0..n {
        let mut row = T::zero();
        for j in 0..n {
            row = row + m[[i, j]] * v[j];
        }
        acc = acc + v[i] * row;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_none());
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(a.view());
        let s2 = 2.0_f64.sqrt();
        assert_abs_diff_eq!(vals[0], 2.0 - s2, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[2], 2.0 + s2, epsilon = 1e-12);
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (x, y) in recon.iter().zip(a.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_solve_falls_back() {
        // rank one: [1 1; 1 1] x = [2 2]
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![2.0, 2.0];
        let sol = solve_spd(a.view(), b.view());
        assert!(sol.used_fallback);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn inverse_and_logdet() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let inv = spd_inverse(a.view()).unwrap();
        let id = inv.dot(&a);
        assert_abs_diff_eq!(id[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id[[0, 1]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            log_det_spd(a.view()).unwrap(),
            11.0_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn works_in_f32() {
        let a = array![[4.0f32, 1.0], [1.0, 3.0]];
        let b = array![1.0f32, 2.0];
        let x = solve_spd(a.view(), b.view()).x;
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-5);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-5);
    }
}
