//! Sparse-dynamics causal factors: fit a sparse ODE to each sample's
//! trajectory and use the flattened coefficients as its feature vector.

mod library;
mod stridge;

pub use library::{build_library, CandidateLibrary, LibraryConfig, Term};
pub use stridge::{estimate_derivatives, stridge, SparseFit, StridgeParams};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, FeatureMatrix, FeatureSource};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDynamicsModel<T> {
    pub library: CandidateLibrary,
    pub fit: SparseFit<T>,
}

impl<T: Scalar> SparseDynamicsModel<T> {
    /// Builds the library, differentiates and runs STRidge on one trajectory.
    pub fn fit(
        trajectory: ArrayView2<T>,
        ds: T,
        library: &CandidateLibrary,
        params: &StridgeParams,
    ) -> Result<Self> {
        let design = build_library(trajectory, library)?;
        let derivatives = estimate_derivatives(trajectory, ds)?;
        let fit = stridge(design.view(), derivatives.view(), params)?;
        Ok(Self {
            library: library.clone(),
            fit,
        })
    }

    pub fn xi(&self) -> &Array2<T> {
        &self.fit.xi
    }
}

/// Named coefficient vector of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatModel<T> {
    pub names: Vec<String>,
    pub values: Array1<T>,
}

pub fn flattened_names(library: &CandidateLibrary) -> Vec<String> {
    let terms = library.term_names();
    (0..library.n_states)
        .flat_map(|i| terms.iter().map(move |t| format!("x{i}::{t}")))
        .collect()
}

/// Row-major flattening of `ξ` with `x{state}::{term}` column names.
pub fn flatten_model<T: Scalar>(model: &SparseDynamicsModel<T>) -> FlatModel<T> {
    FlatModel {
        names: flattened_names(&model.library),
        values: model.fit.xi.iter().copied().collect(),
    }
}

/// Principal-axis projection shared by every trajectory in a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection<T> {
    pub mean: Array1<T>,
    /// `S x rank`, columns ordered by decreasing variance.
    pub components: Array2<T>,
}

impl<T: Scalar> PcaProjection<T> {
    /// Fits on the pooled time steps of every trajectory in the domain.
    pub fn fit(domain: &Domain<T>, rank: usize) -> Result<Self> {
        let trajs: Vec<ArrayView2<T>> = domain
            .samples
            .iter()
            .filter_map(|s| s.trajectory.as_ref().map(|t| t.view()))
            .filter(|t| t.iter().all(|v| v.is_finite()))
            .collect();
        let first = trajs
            .first()
            .ok_or_else(|| Error::invalid("no finite trajectories to fit PCA on"))?;
        let dim = first.ncols();
        if rank == 0 || rank > dim {
            return Err(Error::invalid(format!("PCA rank must be in 1..={dim}")));
        }
        let trajs: Vec<_> = trajs.into_iter().filter(|t| t.ncols() == dim).collect();
        let pooled =
            ndarray::concatenate(Axis(0), &trajs).map_err(|e| Error::invalid(e.to_string()))?;
        let n = pooled.nrows();
        if n < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                found: n,
            });
        }
        let mean = pooled.mean_axis(Axis(0)).expect("non-empty");
        let centered = &pooled - &mean;
        let cov = centered.t().dot(&centered) / T::from_usize_lossy(n - 1);
        let (_, vecs) = linalg::symmetric_eigen(cov.view());
        let mut components = Array2::<T>::zeros((dim, rank));
        for k in 0..rank {
            let mut v = vecs.column(dim - 1 - k).to_owned();
            // sign: largest-magnitude entry positive
            let pivot = v
                .iter()
                .copied()
                .max_by(|a, b| crate::scalar::cmp_finite(&a.abs(), &b.abs()))
                .unwrap_or_else(T::one);
            if pivot < T::zero() {
                v.mapv_inplace(|x| -x);
            }
            components.column_mut(k).assign(&v);
        }
        Ok(Self { mean, components })
    }

    pub fn rank(&self) -> usize {
        self.components.ncols()
    }

    pub fn apply(&self, trajectory: ArrayView2<T>) -> Result<Array2<T>> {
        if trajectory.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: trajectory.ncols(),
            });
        }
        Ok((&trajectory - &self.mean).dot(&self.components))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSettings {
    pub library: LibraryConfig,
    pub stridge: StridgeParams,
    /// Spacing of the traversal parameter between trajectory rows.
    pub ds: f64,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            library: LibraryConfig::default(),
            stridge: StridgeParams::default(),
            ds: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction<T> {
    pub features: FeatureMatrix<T>,
    pub exclusions: Vec<Exclusion>,
    /// Ids of samples whose fit needed the singular-system fallback.
    pub fallback_ids: Vec<String>,
}

/// Fits one sparse model per sample, in parallel, and stacks the flattened
/// coefficients. Failing samples are dropped and reported; the call fails
/// when more than half of the samples fail.
pub fn extract_domain_features<T: Scalar>(
    domain: &Domain<T>,
    settings: &ExtractionSettings,
    projection: Option<&PcaProjection<T>>,
) -> Result<Extraction<T>> {
    if domain.is_empty() {
        return Err(Error::invalid(format!(
            "domain `{}` has no samples",
            domain.name
        )));
    }
    let ds = T::lit(settings.ds);
    if !(settings.ds > 0.0 && settings.ds.is_finite()) {
        return Err(Error::invalid("ds must be positive and finite"));
    }
    let n_states = match projection {
        Some(p) => p.rank(),
        None => domain
            .samples
            .iter()
            .find_map(|s| s.trajectory.as_ref().map(|t| t.ncols()))
            .ok_or_else(|| Error::invalid("no sample has a trajectory"))?,
    };
    let library = settings.library.for_states(n_states)?;

    let outcomes: Vec<Result<SparseDynamicsModel<T>>> = domain
        .samples
        .par_iter()
        .map(|sample| {
            let traj = sample
                .trajectory
                .as_ref()
                .ok_or_else(|| Error::invalid("sample has no trajectory"))?;
            let projected;
            let view = match projection {
                Some(p) => {
                    projected = p.apply(traj.view())?;
                    projected.view()
                }
                None => traj.view(),
            };
            SparseDynamicsModel::fit(view, ds, &library, &settings.stridge)
        })
        .collect();

    let total = outcomes.len();
    let mut ids = Vec::new();
    let mut rows: Vec<T> = Vec::new();
    let mut exclusions = Vec::new();
    let mut fallback_ids = Vec::new();
    for (sample, outcome) in domain.samples.iter().zip(outcomes) {
        match outcome {
            Ok(model) => {
                if model.fit.used_fallback {
                    fallback_ids.push(sample.id.clone());
                }
                ids.push(sample.id.clone());
                rows.extend(model.fit.xi.iter().copied());
            }
            Err(e) => exclusions.push(Exclusion {
                sample_id: sample.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if exclusions.len() * 2 > total {
        return Err(Error::ExtractionFailed {
            failed: exclusions.len(),
            total,
        });
    }
    let names = flattened_names(&library);
    let matrix = Array2::from_shape_vec((ids.len(), names.len()), rows)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(Extraction {
        features: FeatureMatrix::new(names, ids, matrix, FeatureSource::DataDerived)?,
        exclusions,
        fallback_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DomainKind, DomainSample};
    use ndarray::array;

    fn decay(x0: f64, rate: f64, steps: usize, ds: f64) -> Array2<f64> {
        Array2::from_shape_fn((steps, 1), |(t, _)| x0 * (-rate * t as f64 * ds).exp())
    }

    #[test]
    fn flatten_names_and_order() {
        let library = LibraryConfig::new(2, false, true).for_states(1).unwrap();
        let model = SparseDynamicsModel {
            library,
            fit: SparseFit {
                xi: array![[0.0, -2.0, 0.0]],
                threshold: 0.1,
                ridge_lambda: 0.0,
                n_iterations: 1,
                converged: true,
                used_fallback: false,
                underdetermined: false,
                residual_ss: 0.0,
            },
        };
        let flat = flatten_model(&model);
        assert_eq!(flat.names, vec!["x0::1", "x0::x0", "x0::x0^2"]);
        assert_eq!(flat.values, array![0.0, -2.0, 0.0]);
    }

    #[test]
    fn flatten_is_row_major() {
        let library = LibraryConfig::new(1, false, false).for_states(2).unwrap();
        let model = SparseDynamicsModel {
            library,
            fit: SparseFit {
                xi: array![[1.0, 2.0], [3.0, 4.0]],
                threshold: 0.0,
                ridge_lambda: 0.0,
                n_iterations: 1,
                converged: true,
                used_fallback: false,
                underdetermined: false,
                residual_ss: 0.0,
            },
        };
        let flat = flatten_model(&model);
        assert_eq!(flat.values, array![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flat.names, vec!["x0::x0", "x0::x1", "x1::x0", "x1::x1"]);
    }

    #[test]
    fn domain_extraction_reports_bad_sample() {
        let ds = 0.01;
        let mut domain = Domain::new("d", DomainKind::Target);
        for i in 0..10 {
            let mut traj = decay(1.0 + 0.1 * i as f64, 2.0, 101, ds);
            if i == 3 {
                traj[[5, 0]] = f64::NAN;
            }
            domain
                .samples
                .push(DomainSample::new(format!("s{i}")).with_trajectory(traj));
        }
        let settings = ExtractionSettings {
            library: LibraryConfig::new(2, false, true),
            stridge: StridgeParams::new(0.1, 1e-8, 20),
            ds,
        };
        let out = extract_domain_features(&domain, &settings, None).unwrap();
        assert_eq!(out.features.n_rows(), 9);
        assert_eq!(out.exclusions.len(), 1);
        assert_eq!(out.exclusions[0].sample_id, "s3");
        assert!(!out.features.ids().contains(&"s3".to_string()));
        let col = out.features.column_index("x0::x0").unwrap();
        for r in 0..9 {
            assert!((out.features.rows()[[r, col]] + 2.0).abs() < 0.02);
        }
    }

    #[test]
    fn empty_domain_is_rejected() {
        let domain = Domain::<f64>::new("d", DomainKind::Target);
        assert!(extract_domain_features(&domain, &ExtractionSettings::default(), None).is_err());
    }

    #[test]
    fn majority_failure_is_an_error() {
        let mut domain = Domain::new("d", DomainKind::Target);
        domain
            .samples
            .push(DomainSample::new("ok").with_trajectory(decay(1.0, 1.0, 50, 0.02)));
        domain
            .samples
            .push(DomainSample::new("bad1").with_trajectory(array![[f64::NAN], [1.0]]));
        domain
            .samples
            .push(DomainSample::new("bad2").with_trajectory(array![[1.0]]));
        let settings = ExtractionSettings {
            ds: 0.02,
            ..Default::default()
        };
        let err = extract_domain_features(&domain, &settings, None).unwrap_err();
        assert!(matches!(
            err,
            Error::ExtractionFailed {
                failed: 2,
                total: 3
            }
        ));
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let mut domain = Domain::new("d", DomainKind::Source);
        let traj = Array2::from_shape_fn((50, 2), |(t, j)| {
            let s = t as f64 / 10.0;
            if j == 0 {
                s
            } else {
                2.0 * s
            }
        });
        domain
            .samples
            .push(DomainSample::new("a").with_trajectory(traj.clone()));
        let pca = PcaProjection::fit(&domain, 1).unwrap();
        let c = pca.components.column(0);
        let norm = 5f64.sqrt();
        assert!((c[0] - 1.0 / norm).abs() < 1e-8);
        assert!((c[1] - 2.0 / norm).abs() < 1e-8);
        let projected = pca.apply(traj.view()).unwrap();
        assert_eq!(projected.ncols(), 1);
        assert!(PcaProjection::fit(&domain, 3).is_err());
    }
}
