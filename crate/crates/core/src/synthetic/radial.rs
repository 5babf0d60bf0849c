use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Field values sampled along rays from a center point.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile<T> {
    /// Radial coordinate of each row, in grid units.
    pub s: Array1<T>,
    /// `samples_per_ray x n_rays`.
    pub trajectory: Array2<T>,
    pub ds: T,
}

/// Samples `field` along `n_rays` equally spaced directions, starting at
/// angle 0 (increasing column), out to the distance of the nearest grid edge.
pub fn radial_profile<T: Scalar>(
    field: ArrayView2<T>,
    center: (f64, f64),
    n_rays: usize,
    samples_per_ray: usize,
) -> Result<RadialProfile<T>> {
    let (h, w) = field.dim();
    let (r0, c0) = center;
    if h == 0 || w == 0 {
        return Err(Error::invalid("field is empty"));
    }
    let max_r = (h - 1) as f64;
    let max_c = (w - 1) as f64;
    if !(r0.is_finite() && c0.is_finite()) || r0 < 0.0 || c0 < 0.0 || r0 > max_r || c0 > max_c {
        return Err(Error::invalid(format!(
            "center ({r0}, {c0}) lies outside the {h}x{w} grid"
        )));
    }
    if n_rays == 0 {
        return Err(Error::invalid("n_rays must be at least 1"));
    }
    if samples_per_ray < 2 {
        return Err(Error::invalid("samples_per_ray must be at least 2"));
    }
    let radius = r0.min(c0).min(max_r - r0).min(max_c - c0);
    if radius <= 0.0 {
        return Err(Error::invalid("center lies on the grid boundary"));
    }
    if let Some(r) = field
        .outer_iter()
        .position(|row| row.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite {
            context: "field".into(),
            row: r,
        });
    }
    let step = radius / (samples_per_ray - 1) as f64;
    let mut trajectory = Array2::<T>::zeros((samples_per_ray, n_rays));
    for ray in 0..n_rays {
        let theta = std::f64::consts::TAU * ray as f64 / n_rays as f64;
        let (dr, dc) = (theta.sin(), theta.cos());
        for i in 0..samples_per_ray {
            let s = step * i as f64;
            let r = (r0 + s * dr).clamp(0.0, max_r);
            let c = (c0 + s * dc).clamp(0.0, max_c);
            trajectory[[i, ray]] = bilinear(field, r, c);
        }
    }
    Ok(RadialProfile {
        s: Array1::from_shape_fn(samples_per_ray, |i| T::lit(step * i as f64)),
        trajectory,
        ds: T::lit(step),
    })
}

fn bilinear<T: Scalar>(field: ArrayView2<T>, r: f64, c: f64) -> T {
    let (h, w) = field.dim();
    let r_lo = (r.floor() as usize).min(h - 1);
    let c_lo = (c.floor() as usize).min(w - 1);
    let r_hi = (r_lo + 1).min(h - 1);
    let c_hi = (c_lo + 1).min(w - 1);
    let fr = T::lit(r - r_lo as f64);
    let fc = T::lit(c - c_lo as f64);
    let one = T::one();
    let top = field[[r_lo, c_lo]] * (one - fc) + field[[r_lo, c_hi]] * fc;
    let bottom = field[[r_hi, c_lo]] * (one - fc) + field[[r_hi, c_hi]] * fc;
    top * (one - fr) + bottom * fr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal_extract::estimate_derivatives;

    #[test]
    fn constant_field_has_flat_profiles() {
        let field = Array2::from_elem((21, 21), 3.0);
        let p = radial_profile(field.view(), (10.0, 10.0), 6, 11).unwrap();
        let d = estimate_derivatives(p.trajectory.view(), p.ds).unwrap();
        assert!(d.iter().all(|v: &f64| v.abs() < 1e-12));
    }

    #[test]
    fn cone_gives_identical_ramps() {
        let n = 41;
        let field = Array2::from_shape_fn((n, n), |(i, j)| {
            let (a, b) = (i as f64 - 20.0, j as f64 - 20.0);
            (a * a + b * b).sqrt()
        });
        let p = radial_profile(field.view(), (20.0, 20.0), 4, 21).unwrap();
        for ray in 0..4 {
            for i in 0..21 {
                assert!((p.trajectory[[i, ray]] - p.s[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn squared_radius_derivative() {
        // field in normalized radius u = r / 200, f = u²; 100 samples on [0, 1]
        let n = 401;
        let half = 200.0;
        let field = Array2::from_shape_fn((n, n), |(i, j)| {
            let (a, b) = ((i as f64 - half) / half, (j as f64 - half) / half);
            a * a + b * b
        });
        let p = radial_profile(field.view(), (half, half), 1, 100).unwrap();
        let du = p.ds / half;
        let d = estimate_derivatives(p.trajectory.view(), du).unwrap();
        let i = (0..100)
            .min_by(|&a, &b| {
                let ua = (p.s[a] / half - 0.5).abs();
                let ub = (p.s[b] / half - 0.5).abs();
                ua.partial_cmp(&ub).unwrap()
            })
            .unwrap();
        let u = p.s[i] / half;
        assert!((d[[i, 0]] - 2.0 * u).abs() / (2.0 * u) < 0.02);
        assert!((d[[i, 0]] - 1.0).abs() < 0.02);
    }

    #[test]
    fn center_outside_is_rejected() {
        let field = Array2::from_elem((5, 5), 1.0);
        assert!(radial_profile(field.view(), (7.0, 2.0), 3, 5).is_err());
        assert!(radial_profile(field.view(), (-0.5, 2.0), 3, 5).is_err());
        assert!(radial_profile(field.view(), (2.0, 2.0), 0, 5).is_err());
    }
}
