//! Reference downstream learner: L2-regularized multinomial logistic
//! regression fitted by damped Newton iterations.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSettings {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            tolerance: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRegression<T> {
    pub columns: Vec<String>,
    /// Standardization applied before the linear map.
    pub mean: Array1<T>,
    pub scale: Array1<T>,
    /// `classes x (features + 1)`, bias last.
    pub weights: Array2<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> SoftmaxRegression<T> {
    pub fn fit(
        features: &FeatureMatrix<T>,
        labels: &[usize],
        settings: &ClassifierSettings,
    ) -> Result<Self> {
        let n = features.n_rows();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if n == 0 {
            return Err(Error::InsufficientData {
                needed: 1,
                found: 0,
            });
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let distinct = {
            let mut seen = vec![false; n_classes];
            labels.iter().for_each(|&l| seen[l] = true);
            seen.iter().filter(|&&s| s).count()
        };
        if distinct < 2 {
            return Err(Error::invalid("training labels contain a single class"));
        }

        let rows = features.rows();
        let mean = rows.mean_axis(Axis(0)).expect("non-empty");
        let scale =
            rows.std_axis(Axis(0), T::zero())
                .mapv(|s| if s > T::zero() { s } else { T::one() });
        let x = design(rows.view(), &mean, &scale);
        let d = x.ncols();
        let dim = n_classes * d;
        let l2 = T::lit(settings.l2);
        let nt = T::from_usize_lossy(n);

        let objective = |theta: &Array1<T>| -> T {
            let w = theta
                .view()
                .into_shape_with_order((n_classes, d))
                .expect("shape");
            let mut loss = T::zero();
            for (i, row) in x.outer_iter().enumerate() {
                let logits = w.dot(&row);
                loss = loss + log_sum_exp(logits.view()) - logits[labels[i]];
            }
            loss / nt + l2 * theta.dot(theta) / T::lit(2.0)
        };

        let mut theta = Array1::<T>::zeros(dim);
        let mut f = objective(&theta);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < settings.max_iter {
            let w = theta
                .view()
                .into_shape_with_order((n_classes, d))
                .expect("shape")
                .to_owned();
            let mut grad = theta.mapv(|v| v * l2);
            let mut hess = Array2::<T>::eye(dim) * l2;
            for (i, row) in x.outer_iter().enumerate() {
                let p = softmax(w.dot(&row).view());
                for a in 0..n_classes {
                    let ra = p[a] - if labels[i] == a { T::one() } else { T::zero() };
                    for j in 0..d {
                        grad[a * d + j] = grad[a * d + j] + ra * row[j] / nt;
                    }
                    for b in 0..n_classes {
                        let c = (if a == b { p[a] } else { T::zero() }) - p[a] * p[b];
                        if c == T::zero() {
                            continue;
                        }
                        for j in 0..d {
                            let cj = c * row[j] / nt;
                            for k in 0..d {
                                hess[[a * d + j, b * d + k]] =
                                    hess[[a * d + j, b * d + k]] + cj * row[k];
                            }
                        }
                    }
                }
            }
            let gnorm = grad.dot(&grad).sqrt();
            if gnorm < T::lit(settings.tolerance) {
                converged = true;
                break;
            }
            iterations += 1;
            let step = linalg::solve_spd(hess.view(), grad.view()).x;
            let slope = grad.dot(&step);
            let mut t = T::one();
            loop {
                let trial = &theta - &step.mapv(|v| v * t);
                let ft = objective(&trial);
                if ft <= f - T::lit(1e-4) * t * slope || t < T::lit(1e-10) {
                    theta = trial;
                    f = ft;
                    break;
                }
                t = t / T::lit(2.0);
            }
        }
        let weights = theta.into_shape_with_order((n_classes, d)).expect("shape");
        Ok(Self {
            columns: features.columns().to_vec(),
            mean,
            scale,
            weights,
            iterations,
            converged,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, features: &FeatureMatrix<T>) -> Result<Vec<usize>> {
        features.check_columns(&self.columns)?;
        let x = design(features.rows().view(), &self.mean, &self.scale);
        Ok(x.outer_iter()
            .map(|row| {
                let logits = self.weights.dot(&row);
                // first maximum wins
                let mut best = 0;
                for (c, v) in logits.iter().enumerate() {
                    if *v > logits[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, features: &FeatureMatrix<T>, labels: &[usize]) -> Result<f64> {
        if labels.len() != features.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: features.n_rows(),
                found: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::InsufficientData {
                needed: 1,
                found: 0,
            });
        }
        let hits = self
            .predict(features)?
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn design<T: Scalar>(
    rows: ndarray::ArrayView2<T>,
    mean: &Array1<T>,
    scale: &Array1<T>,
) -> Array2<T> {
    let (n, f) = rows.dim();
    let mut x = Array2::<T>::ones((n, f + 1));
    x.slice_mut(ndarray::s![.., ..f])
        .assign(&((&rows - mean) / scale));
    x
}

fn log_sum_exp<T: Scalar>(v: ArrayView1<T>) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

fn softmax<T: Scalar>(v: ArrayView1<T>) -> Array1<T> {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e = v.mapv(|x| (x - m).exp());
    let z = e.sum();
    e / z
}

/// Fits on `train`, returns accuracy on `test`.
pub fn reference_classifier<T: Scalar>(
    train: &FeatureMatrix<T>,
    train_labels: &[usize],
    test: &FeatureMatrix<T>,
    test_labels: &[usize],
) -> Result<f64> {
    SoftmaxRegression::fit(train, train_labels, &ClassifierSettings::default())?
        .accuracy(test, test_labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FeatureSource;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, seed: u64) -> (FeatureMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [(-3.0, 0.0), (3.0, 0.0), (0.0, 4.0)];
        let mut rows = Array2::zeros((n, 2));
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            rows[[i, 0]] = centers[c].0 + 0.5 * a;
            rows[[i, 1]] = centers[c].1 + 0.5 * b;
            labels.push(c);
        }
        let fm = FeatureMatrix::with_default_ids(
            vec!["a".into(), "b".into()],
            rows,
            FeatureSource::DataDerived,
        )
        .unwrap();
        (fm, labels)
    }

    #[test]
    fn separable_blobs_fit_well() {
        let (x, y) = blobs(150, 1);
        let model = SoftmaxRegression::fit(&x, &y, &ClassifierSettings::default()).unwrap();
        assert!(model.converged);
        assert!(model.accuracy(&x, &y).unwrap() >= 0.99);
        let (xt, yt) = blobs(90, 2);
        assert!(reference_classifier(&x, &y, &xt, &yt).unwrap() >= 0.95);
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let (x, y) = blobs(60, 3);
        let settings = ClassifierSettings::default();
        let model = SoftmaxRegression::fit(&x, &y, &settings).unwrap();
        // central-difference gradient of the objective at the returned weights
        let xd = design(x.rows().view(), &model.mean, &model.scale);
        let obj = |w: &Array2<f64>| {
            let mut loss = 0.0;
            for (i, row) in xd.outer_iter().enumerate() {
                let logits = w.dot(&row);
                loss += log_sum_exp(logits.view()) - logits[y[i]];
            }
            loss / 60.0 + settings.l2 * w.iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let h = 1e-6;
        for idx in [[0, 0], [1, 2], [2, 1]] {
            let mut up = model.weights.clone();
            let mut dn = model.weights.clone();
            up[idx] += h;
            dn[idx] -= h;
            assert!(((obj(&up) - obj(&dn)) / (2.0 * h)).abs() < 1e-5);
        }
    }

    #[test]
    fn shuffled_labels_near_chance() {
        let (x, mut y) = blobs(600, 4);
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let (xt, mut yt) = blobs(3000, 5);
        yt.shuffle(&mut ChaCha8Rng::seed_from_u64(10));
        let acc = reference_classifier(&x, &y, &xt, &yt).unwrap();
        assert!((acc - 1.0 / 3.0).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, _) = blobs(30, 6);
        assert!(SoftmaxRegression::fit(&x, &[1; 30], &ClassifierSettings::default()).is_err());
    }

    #[test]
    fn deterministic() {
        let (x, y) = blobs(45, 7);
        let s = ClassifierSettings::default();
        assert_eq!(
            SoftmaxRegression::fit(&x, &y, &s).unwrap(),
            SoftmaxRegression::fit(&x, &y, &s).unwrap()
        );
    }
}
