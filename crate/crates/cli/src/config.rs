use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use confgap::causal_extract::ExtractionSettings;
use confgap::conformal::{IntervalRule, QuantileRule};
use confgap::divergence::RobustnessSettings;
use confgap::persistence::DEFAULT_SIDECAR_THRESHOLD;
use confgap::{CalibrationOptions, LibraryConfig, RidgeEps, RobustnessVariant, StridgeParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::{CliResult, Failure, InputContext};

/// Effective settings of one command run. Every artifact embeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub robustness_variant: RobustnessVariant,
    pub ridge_eps: RidgeEps,
    pub quantile: QuantileRule,
    pub interval: IntervalRule,
    pub split_seed: u64,
    /// `None` means the command's default library.
    pub library: Option<LibraryConfig>,
    pub stridge: StridgeParams,
    /// Trajectory spacing; `None` reads it from the `s` column.
    pub ds: Option<f64>,
    /// Project trajectories onto this many principal axes before fitting.
    pub pca_rank: Option<usize>,
    pub coverage_trials: usize,
    pub sidecar_threshold: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cal = CalibrationOptions::default();
        Self {
            alpha: cal.alpha,
            robustness_variant: cal.robustness.variant,
            ridge_eps: cal.robustness.ridge_eps,
            quantile: cal.quantile,
            interval: cal.interval,
            split_seed: cal.split_seed,
            library: None,
            stridge: StridgeParams::default(),
            ds: None,
            pca_rank: None,
            coverage_trials: 50,
            sidecar_threshold: DEFAULT_SIDECAR_THRESHOLD,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Failure::usage(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        let eps = match self.ridge_eps {
            RidgeEps::Relative(v) | RidgeEps::Absolute(v) => v,
        };
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Failure::usage("ridge_eps must be finite and non-negative"));
        }
        let st = self.stridge;
        if !(st.threshold.is_finite() && st.threshold >= 0.0) {
            return Err(Failure::usage(
                "stridge threshold must be finite and non-negative",
            ));
        }
        if !(st.ridge_lambda.is_finite() && st.ridge_lambda >= 0.0) {
            return Err(Failure::usage(
                "stridge lambda must be finite and non-negative",
            ));
        }
        if st.max_iter == 0 {
            return Err(Failure::usage("stridge max_iter must be at least 1"));
        }
        if let Some(ds) = self.ds {
            if !(ds.is_finite() && ds > 0.0) {
                return Err(Failure::usage("ds must be positive"));
            }
        }
        if self.pca_rank == Some(0) {
            return Err(Failure::usage("pca_rank must be at least 1"));
        }
        if self.coverage_trials == 0 {
            return Err(Failure::usage("coverage_trials must be at least 1"));
        }
        Ok(())
    }

    pub fn calibration_options(&self) -> CalibrationOptions {
        CalibrationOptions {
            alpha: self.alpha,
            split_seed: self.split_seed,
            robustness: RobustnessSettings::new(self.robustness_variant, self.ridge_eps),
            quantile: self.quantile,
            interval: self.interval,
        }
    }

    pub fn extraction_settings(&self, ds: f64) -> ExtractionSettings {
        ExtractionSettings {
            library: self.library.unwrap_or_default(),
            stridge: self.stridge,
            ds,
        }
    }

    /// Fills the optional fields that a command resolved itself.
    pub fn resolved(&self, library: LibraryConfig, ds: Option<f64>) -> Self {
        Self {
            library: Some(library),
            ds: ds.or(self.ds),
            ..self.clone()
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    PairwiseMean,
    DistributionDirect,
}

impl From<VariantArg> for RobustnessVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::PairwiseMean => RobustnessVariant::PairwiseMean,
            VariantArg::DistributionDirect => RobustnessVariant::DistributionDirect,
        }
    }
}

/// Options shared by every command. Flags override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Miscoverage level.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Calibration split seed.
    #[arg(long, global = true, env = "CONFGAP_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub variant: Option<VariantArg>,
    /// Relative covariance ridge (scaled by the mean variance).
    #[arg(long, global = true)]
    pub ridge_eps: Option<f64>,
    /// STRidge pruning threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// STRidge ridge penalty.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Highest monomial degree in the candidate library.
    #[arg(long, global = true)]
    pub poly_degree: Option<usize>,
    #[arg(long, global = true)]
    pub no_trig: bool,
    #[arg(long, global = true)]
    pub no_constant: bool,
    #[arg(long, global = true)]
    pub ds: Option<f64>,
}

impl ConfigArgs {
    pub fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.seed {
            cfg.split_seed = v;
        }
        if let Some(v) = self.variant {
            cfg.robustness_variant = v.into();
        }
        if let Some(v) = self.ridge_eps {
            cfg.ridge_eps = RidgeEps::Relative(v);
        }
        if let Some(v) = self.threshold {
            cfg.stridge.threshold = v;
        }
        if let Some(v) = self.lambda {
            cfg.stridge.ridge_lambda = v;
        }
        if let Some(v) = self.max_iter {
            cfg.stridge.max_iter = v;
        }
        if self.poly_degree.is_some() || self.no_trig || self.no_constant {
            let mut lib = cfg.library.unwrap_or_default();
            if let Some(d) = self.poly_degree {
                lib.poly_max_degree = d;
            }
            if self.no_trig {
                lib.include_trig = false;
            }
            if self.no_constant {
                lib.include_constant = false;
            }
            cfg.library = Some(lib);
        }
        if let Some(v) = self.ds {
            cfg.ds = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text =
        std::fs::read_to_string(path).input(&format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).input(&format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_value(cfg.to_value()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.alpha, 0.05);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"alpha": 0.1, "stridge": {"threshold": 0.2}}"#).unwrap();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.stridge.threshold, 0.2);
        assert_eq!(cfg.stridge.max_iter, StridgeParams::default().max_iter);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"alhpa": 0.1}"#).is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let args = ConfigArgs {
            alpha: Some(0.2),
            seed: Some(9),
            poly_degree: Some(2),
            no_trig: true,
            ..Default::default()
        };
        let cfg = args.load().unwrap();
        assert_eq!(cfg.alpha, 0.2);
        assert_eq!(cfg.split_seed, 9);
        assert_eq!(cfg.library, Some(LibraryConfig::new(2, false, true)));
    }

    #[test]
    fn out_of_range_alpha_is_a_usage_error() {
        let args = ConfigArgs {
            alpha: Some(1.5),
            ..Default::default()
        };
        assert!(matches!(args.load(), Err(Failure::Usage(_))));
    }
}
