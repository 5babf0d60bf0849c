//! Synthetic source/target domains with a known causal shift, a reference
//! classifier, and the sweeps built on them.

mod classifier;
mod radial;
mod sweep;

pub use classifier::{reference_classifier, ClassifierSettings, SoftmaxRegression};
pub use radial::{radial_profile, RadialProfile};
pub use sweep::{
    noise_sweep, pearson, shift_sweep, NoiseEntry, NoiseLevelRow, NoiseSweepTable, ShiftSweep,
    ShiftSweepPoint, SweepGroup, SweepTarget,
};

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::causal_extract::{
    extract_domain_features, ExtractionSettings, LibraryConfig, StridgeParams,
};
use crate::domain::{
    Domain, DomainKind, DomainSample, FeatureMatrix, FeatureSource, MIN_SOURCE_SAMPLES,
};
use crate::error::{Error, Result};
use crate::refinement::fuse;
use crate::scalar::Scalar;

/// Class boundaries on the standard-normal causal factor giving three
/// equally likely classes.
pub const CLASS_THRESHOLDS: [f64; 2] = [-0.430_727_299_295_457_5, 0.430_727_299_295_457_5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// `ẋ = −p x`
    #[default]
    LinearDecay,
    /// `ẋ₀ = p x₁, ẋ₁ = −p x₀`
    HarmonicOscillator,
    /// `ẋ = −p x³`
    Cubic,
}

impl Dynamics {
    pub fn n_states(self) -> usize {
        match self {
            Dynamics::HarmonicOscillator => 2,
            _ => 1,
        }
    }

    pub fn base_parameter(self) -> f64 {
        match self {
            Dynamics::LinearDecay => 1.0,
            Dynamics::HarmonicOscillator => 2.0,
            Dynamics::Cubic => 1.0,
        }
    }

    /// Parameter change per unit of the causal factor.
    pub fn parameter_scale(self) -> f64 {
        match self {
            Dynamics::LinearDecay => 0.25,
            Dynamics::HarmonicOscillator => 0.25,
            Dynamics::Cubic => 0.1,
        }
    }

    /// Smallest library containing the true right-hand side.
    pub fn library(self) -> LibraryConfig {
        match self {
            Dynamics::LinearDecay | Dynamics::HarmonicOscillator => {
                LibraryConfig::new(1, false, false)
            }
            Dynamics::Cubic => LibraryConfig::new(3, false, false),
        }
    }

    /// Trajectory length at unit span that keeps derivative error below the
    /// pruning threshold.
    pub fn recommended_steps(self) -> usize {
        match self {
            Dynamics::Cubic => 1001,
            _ => 101,
        }
    }

    fn initial_state<R: Rng>(self, rng: &mut R) -> Vec<f64> {
        let amp = rng.random_range(0.5..1.5);
        match self {
            Dynamics::HarmonicOscillator => {
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                vec![amp * phase.cos(), amp * phase.sin()]
            }
            _ => vec![amp],
        }
    }

    /// Closed-form solution at each `s`.
    pub fn simulate(self, param: f64, x0: &[f64], s: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((s.len(), self.n_states()));
        for (t, &si) in s.iter().enumerate() {
            match self {
                Dynamics::LinearDecay => out[[t, 0]] = x0[0] * (-param * si).exp(),
                Dynamics::HarmonicOscillator => {
                    let (sn, cs) = (param * si).sin_cos();
                    out[[t, 0]] = x0[0] * cs + x0[1] * sn;
                    out[[t, 1]] = -x0[0] * sn + x0[1] * cs;
                }
                Dynamics::Cubic => {
                    out[[t, 0]] = x0[0] / (1.0 + 2.0 * param * x0[0] * x0[0] * si).sqrt();
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeSignal {
    #[default]
    None,
    /// Noisy readouts of the causal factor that do not move with the shift.
    GapClosing,
    /// A noisy copy of the observed (shifted) dynamics parameter.
    Redundant,
}

const GAP_LOADINGS: [(f64, f64); 5] = [
    (0.2, 0.0),
    (-0.15, 0.3),
    (0.1, -0.2),
    (0.15, 0.1),
    (-0.2, -0.4),
];
const GAP_NOISE: f64 = 1.0;
const REDUNDANT_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftScenario {
    pub dynamics: Dynamics,
    pub n_samples_per_domain: usize,
    /// Target parameter offset, in units of the causal factor's standard deviation.
    pub shift_level: f64,
    /// Standard deviation of additive trajectory noise.
    pub noise_sigma: f64,
    pub knowledge_signal: KnowledgeSignal,
    pub seed: u64,
    /// Weight of the label-independent factor in the dynamics parameter.
    pub nuisance: f64,
    pub steps: usize,
    pub span: f64,
    /// Candidate library for extraction; `None` uses [`Dynamics::library`].
    pub library: Option<LibraryConfig>,
    pub stridge: StridgeParams,
}

impl Default for ShiftScenario {
    fn default() -> Self {
        Self {
            dynamics: Dynamics::LinearDecay,
            n_samples_per_domain: 200,
            shift_level: 0.0,
            noise_sigma: 0.0,
            knowledge_signal: KnowledgeSignal::None,
            seed: 0,
            nuisance: 0.3,
            steps: 101,
            span: 1.0,
            library: None,
            stridge: StridgeParams::default(),
        }
    }
}

impl ShiftScenario {
    pub fn for_dynamics(dynamics: Dynamics) -> Self {
        Self {
            dynamics,
            steps: dynamics.recommended_steps(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples_per_domain < MIN_SOURCE_SAMPLES {
            return Err(Error::invalid(format!(
                "n_samples_per_domain must be at least {MIN_SOURCE_SAMPLES}"
            )));
        }
        for (name, v) in [
            ("shift_level", self.shift_level),
            ("noise_sigma", self.noise_sigma),
            ("nuisance", self.nuisance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.steps < 3 {
            return Err(Error::invalid("steps must be at least 3"));
        }
        if !(self.span.is_finite() && self.span > 0.0) {
            return Err(Error::invalid("span must be positive"));
        }
        Ok(())
    }

    pub fn ds(&self) -> f64 {
        self.span / (self.steps - 1) as f64
    }

    pub fn extraction_settings(&self) -> ExtractionSettings {
        ExtractionSettings {
            library: self.library.unwrap_or_else(|| self.dynamics.library()),
            stridge: self.stridge,
            ds: self.ds(),
        }
    }

    pub fn with_shift(mut self, shift_level: f64) -> Self {
        self.shift_level = shift_level;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Generated domains plus the latent causal factor of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair<T> {
    pub source: Domain<T>,
    pub target: Domain<T>,
    pub source_causal: Vec<f64>,
    pub target_causal: Vec<f64>,
}

pub fn label_for(causal: f64) -> usize {
    CLASS_THRESHOLDS.iter().filter(|&&t| causal > t).count()
}

pub fn generate_scenario<T: Scalar>(spec: &ShiftScenario) -> Result<SyntheticPair<T>> {
    let (source, source_causal) = generate_domain(spec, DomainKind::Source)?;
    let (target, target_causal) = generate_domain(spec, DomainKind::Target)?;
    Ok(SyntheticPair {
        source,
        target,
        source_causal,
        target_causal,
    })
}

/// One side of a scenario. The source ignores `shift_level`; the target's
/// draws do not depend on it either, only its parameters move.
pub fn generate_domain<T: Scalar>(
    spec: &ShiftScenario,
    kind: DomainKind,
) -> Result<(Domain<T>, Vec<f64>)> {
    spec.validate()?;
    let (name, stream, shift) = match kind {
        DomainKind::Source => ("source", 0, 0.0),
        DomainKind::Target => ("target", 2, spec.shift_level),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut krng = ChaCha8Rng::seed_from_u64(spec.seed);
    krng.set_stream(stream + 1);

    let dyn_ = spec.dynamics;
    let s: Vec<f64> = (0..spec.steps).map(|t| t as f64 * spec.ds()).collect();
    let mut domain = Domain::new(name, kind);
    domain.knowledge_columns = match spec.knowledge_signal {
        KnowledgeSignal::None => Vec::new(),
        KnowledgeSignal::GapClosing => (0..GAP_LOADINGS.len()).map(|i| format!("k{i}")).collect(),
        KnowledgeSignal::Redundant => vec!["k0".to_string()],
    };
    let mut causal = Vec::with_capacity(spec.n_samples_per_domain);
    for i in 0..spec.n_samples_per_domain {
        let c: f64 = StandardNormal.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let param =
            dyn_.base_parameter() + dyn_.parameter_scale() * (c + spec.nuisance * z + shift);
        let x0 = dyn_.initial_state(&mut rng);
        let mut traj = dyn_.simulate(param, &x0, &s);
        if spec.noise_sigma > 0.0 {
            traj.mapv_inplace(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + spec.noise_sigma * e
            });
        }
        let mut sample = DomainSample::new(format!("{name}-{i:04}"))
            .with_trajectory(traj.mapv(T::lit))
            .with_label(label_for(c));
        let knowledge: Option<Vec<f64>> = match spec.knowledge_signal {
            KnowledgeSignal::None => None,
            KnowledgeSignal::GapClosing => Some(
                GAP_LOADINGS
                    .iter()
                    .map(|&(a, b)| {
                        let e: f64 = StandardNormal.sample(&mut krng);
                        1.0 / (1.0 + (-(a * c + b + GAP_NOISE * e)).exp())
                    })
                    .collect(),
            ),
            KnowledgeSignal::Redundant => {
                let e: f64 = StandardNormal.sample(&mut krng);
                Some(vec![param + REDUNDANT_NOISE * dyn_.parameter_scale() * e])
            }
        };
        if let Some(k) = knowledge {
            sample = sample.with_knowledge(Array1::from(k).mapv(T::lit));
        }
        domain.samples.push(sample);
        causal.push(c);
    }
    Ok((domain, causal))
}

/// Feature matrix of the requested kind plus labels aligned to its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures<T> {
    pub features: FeatureMatrix<T>,
    pub labels: Vec<usize>,
}

pub fn domain_features<T: Scalar>(
    domain: &Domain<T>,
    settings: &ExtractionSettings,
    kind: FeatureSource,
) -> Result<LabeledFeatures<T>> {
    let features = match kind {
        FeatureSource::DataDerived => extract_domain_features(domain, settings, None)?.features,
        FeatureSource::Knowledge => domain.knowledge_matrix()?,
        FeatureSource::Fused => {
            let data = extract_domain_features(domain, settings, None)?.features;
            let know = domain.knowledge_matrix()?;
            let kept: HashMap<&str, usize> = know
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            let idx: Vec<usize> = data
                .ids()
                .iter()
                .filter_map(|id| kept.get(id.as_str()).copied())
                .collect();
            fuse(&data, &know.select_rows(&idx))?
        }
    };
    let by_id: HashMap<&str, Option<usize>> = domain
        .samples
        .iter()
        .map(|s| (s.id.as_str(), s.label))
        .collect();
    let labels = features
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .flatten()
                .ok_or_else(|| Error::invalid(format!("sample `{id}` has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledFeatures { features, labels })
}
