//! Conformal domain-gap estimation over sparse-dynamics features.

pub mod causal_extract;
pub mod conformal;
pub mod divergence;
pub mod domain;
pub mod error;
pub mod linalg;
pub mod persistence;
pub mod refinement;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use causal_extract::{
    extract_domain_features, ExtractionSettings, LibraryConfig, StridgeParams,
};
pub use conformal::{
    coverage_check, dcb_compute, sdcd, CalibrationOptions, DcbCalibration, DcbScorer, SdcdReport,
};
pub use divergence::{GaussianModel, RidgeEps, RobustnessVariant};
pub use domain::{Domain, DomainKind, DomainSample, FeatureMatrix, FeatureSource};
pub use refinement::{ablation_search, fuse, AblationTrace, DomainPair, Strategy};

pub type FeatureMatrix64 = FeatureMatrix<f64>;
pub type Domain64 = Domain<f64>;
pub type GaussianModel64 = GaussianModel<f64>;
pub type DcbCalibration64 = DcbCalibration<f64>;
pub type SdcdReport64 = SdcdReport<f64>;
