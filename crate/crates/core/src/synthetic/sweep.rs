use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{domain_features, generate_domain, reference_classifier, ShiftScenario};
use crate::conformal::{dcb_compute, sdcd, CalibrationOptions};
use crate::domain::{DomainKind, FeatureMatrix, FeatureSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pearson correlation; `None` when either side has zero variance or the
/// lengths differ or are below 2.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSweepPoint {
    pub seed: u64,
    pub shift_level: f64,
    pub sdcd: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSweep<T> {
    pub points: Vec<ShiftSweepPoint>,
    /// One group per seed: its source features and every shifted target.
    pub groups: Vec<SweepGroup<T>>,
}

impl<T> ShiftSweep<T> {
    pub fn correlation(&self) -> Option<f64> {
        let s: Vec<f64> = self.points.iter().map(|p| p.sdcd).collect();
        let a: Vec<f64> = self.points.iter().map(|p| p.accuracy).collect();
        pearson(&s, &a)
    }

    /// Mean of `f` over seeds at each level, in level order.
    pub fn level_means(&self, levels: &[f64], f: impl Fn(&ShiftSweepPoint) -> f64) -> Vec<f64> {
        levels
            .iter()
            .map(|&l| {
                let vals: Vec<f64> = self
                    .points
                    .iter()
                    .filter(|p| p.shift_level == l)
                    .map(&f)
                    .collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    }
}

/// For each seed: generate the source once, then a target per shift level;
/// calibrate on the source, score every target, and record the reference
/// classifier's target accuracy.
pub fn shift_sweep<T: Scalar>(
    base: &ShiftScenario,
    levels: &[f64],
    seeds: &[u64],
    kind: FeatureSource,
    options: &CalibrationOptions,
) -> Result<ShiftSweep<T>> {
    if levels.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "shift sweep needs at least one level and one seed",
        ));
    }
    let settings = base.extraction_settings();
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let spec = base.with_seed(seed);
            let (source_domain, _) = generate_domain::<T>(&spec, DomainKind::Source)?;
            let source = domain_features(&source_domain, &settings, kind)?;
            let calibration = dcb_compute(&source.features, options)?;
            let mut points = Vec::new();
            let mut targets = Vec::new();
            for &level in levels {
                let (target_domain, _) =
                    generate_domain::<T>(&spec.with_shift(level), DomainKind::Target)?;
                let target = domain_features(&target_domain, &settings, kind)?;
                let name = format!("seed{seed}-shift{level}");
                let report = sdcd(&name, &target.features, &source.features, &calibration)?;
                let accuracy = reference_classifier(
                    &source.features,
                    &source.labels,
                    &target.features,
                    &target.labels,
                )?;
                points.push(ShiftSweepPoint {
                    seed,
                    shift_level: level,
                    sdcd: report.sdcd_percent.as_f64(),
                    accuracy,
                });
                targets.push(SweepTarget {
                    name,
                    features: target.features,
                    accuracy,
                });
            }
            Ok((
                points,
                SweepGroup {
                    source: source.features,
                    targets,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    let mut groups = Vec::new();
    for (p, g) in per_seed {
        points.extend(p);
        groups.push(g);
    }
    Ok(ShiftSweep { points, groups })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTarget<T> {
    pub name: String,
    pub features: FeatureMatrix<T>,
    /// Reference accuracy on the clean target.
    pub accuracy: f64,
}

/// A source and the targets scored against it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGroup<T> {
    pub source: FeatureMatrix<T>,
    pub targets: Vec<SweepTarget<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub group: usize,
    pub target: String,
    pub sdcd: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevelRow {
    /// `None` is the noiseless level.
    pub psnr_db: Option<f64>,
    pub entries: Vec<NoiseEntry>,
    pub mean_sdcd: f64,
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepTable {
    pub seed: u64,
    pub rows: Vec<NoiseLevelRow>,
}

impl NoiseSweepTable {
    pub fn row(&self, psnr_db: Option<f64>) -> Option<&NoiseLevelRow> {
        self.rows.iter().find(|r| r.psnr_db == psnr_db)
    }
}

/// Adds Gaussian feature noise at each PSNR level (`σ = peak / 10^(psnr/20)`,
/// `peak` the largest absolute source feature of the group), recalibrates on
/// the noisy source and rescores every noisy target.
pub fn noise_sweep<T: Scalar>(
    groups: &[SweepGroup<T>],
    levels: &[Option<f64>],
    options: &CalibrationOptions,
    seed: u64,
) -> Result<NoiseSweepTable> {
    if levels.is_empty() {
        return Err(Error::invalid("noise sweep needs at least one PSNR level"));
    }
    if let Some(bad) = levels.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("PSNR level {bad} is not finite")));
    }
    if groups.is_empty() {
        return Err(Error::invalid("noise sweep needs at least one source"));
    }
    for g in groups {
        if g.targets.is_empty() {
            return Err(Error::invalid("every source needs at least one target"));
        }
        for t in &g.targets {
            t.features.check_columns(g.source.columns())?;
        }
    }
    let rows = levels
        .par_iter()
        .enumerate()
        .map(|(li, &psnr)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(li as u64);
            let mut entries = Vec::new();
            for (gi, group) in groups.iter().enumerate() {
                let peak = group
                    .source
                    .rows()
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
                let sigma = psnr.map_or(0.0, |db| peak / 10f64.powf(db / 20.0));
                let source = add_noise(&group.source, sigma, &mut rng)?;
                let calibration = dcb_compute(&source, options)?;
                for target in &group.targets {
                    let noisy = add_noise(&target.features, sigma, &mut rng)?;
                    let report = sdcd(&target.name, &noisy, &source, &calibration)?;
                    entries.push(NoiseEntry {
                        group: gi,
                        target: target.name.clone(),
                        sdcd: report.sdcd_percent.as_f64(),
                        accuracy: target.accuracy,
                    });
                }
            }
            let s: Vec<f64> = entries.iter().map(|e| e.sdcd).collect();
            let a: Vec<f64> = entries.iter().map(|e| e.accuracy).collect();
            Ok(NoiseLevelRow {
                psnr_db: psnr,
                mean_sdcd: s.iter().sum::<f64>() / s.len() as f64,
                correlation: pearson(&s, &a),
                entries,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseSweepTable { seed, rows })
}

fn add_noise<T: Scalar>(
    m: &FeatureMatrix<T>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMatrix<T>> {
    if sigma == 0.0 {
        return Ok(m.clone());
    }
    m.map_rows(|rows| {
        let noise = Array2::from_shape_fn(rows.dim(), |_| {
            let e: f64 = StandardNormal.sample(rng);
            T::lit(sigma * e)
        });
        rows + &noise
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pearson_hand_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]), Some(0.0));
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), None);
        assert_eq!(pearson(&[1.0], &[2.0]), None);
    }

    fn tiny_group() -> SweepGroup<f64> {
        let cols = vec!["a".to_string(), "b".to_string()];
        let src = FeatureMatrix::with_default_ids(
            cols.clone(),
            Array2::from_shape_fn((40, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 3.0),
            FeatureSource::DataDerived,
        )
        .unwrap();
        let tgt = FeatureMatrix::with_default_ids(
            cols,
            array![[1.0, 1.0], [2.0, 0.5], [9.0, 9.0]],
            FeatureSource::DataDerived,
        )
        .unwrap();
        SweepGroup {
            source: src,
            targets: vec![SweepTarget {
                name: "t".into(),
                features: tgt,
                accuracy: 0.5,
            }],
        }
    }

    #[test]
    fn clean_level_matches_direct_scoring() {
        let group = tiny_group();
        let opts = CalibrationOptions::default();
        let table =
            noise_sweep(std::slice::from_ref(&group), &[None, Some(10.0)], &opts, 3).unwrap();
        let cal = dcb_compute(&group.source, &opts).unwrap();
        let direct = sdcd("t", &group.targets[0].features, &group.source, &cal).unwrap();
        assert_eq!(
            table.row(None).unwrap().entries[0].sdcd,
            direct.sdcd_percent
        );
        assert_eq!(table.rows.len(), 2);
        assert_eq!(
            table,
            noise_sweep(&[group], &[None, Some(10.0)], &opts, 3).unwrap()
        );
    }

    #[test]
    fn rejects_bad_levels() {
        let group = tiny_group();
        let opts = CalibrationOptions::default();
        assert!(noise_sweep(std::slice::from_ref(&group), &[], &opts, 0).is_err());
        assert!(noise_sweep(&[group], &[Some(f64::NAN)], &opts, 0).is_err());
    }
}
