//! Domain types shared by every stage: samples, domains, feature matrices,
//! plus domain validation.

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Minimum number of samples a source domain needs for calibration.
pub const MIN_SOURCE_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Source,
    Target,
}

/// One observation: a traversal trajectory, a knowledge vector, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample<T> {
    pub id: String,
    /// `T x S` matrix, one row per traversal step.
    pub trajectory: Option<Array2<T>>,
    pub knowledge: Option<Array1<T>>,
    pub label: Option<usize>,
}

impl<T: Scalar> DomainSample<T> {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            trajectory: None,
            knowledge: None,
            label: None,
        }
    }

    pub fn with_trajectory(mut self, trajectory: Array2<T>) -> Self {
        self.trajectory = Some(trajectory);
        self
    }

    pub fn with_knowledge(mut self, knowledge: Array1<T>) -> Self {
        self.knowledge = Some(knowledge);
        self
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain<T> {
    pub name: String,
    pub kind: DomainKind,
    pub samples: Vec<DomainSample<T>>,
    /// Names of the knowledge-vector components, shared by all samples.
    pub knowledge_columns: Vec<String>,
}

impl<T: Scalar> Domain<T> {
    pub fn new(name: impl Into<String>, kind: DomainKind) -> Self {
        Self {
            name: name.into(),
            kind,
            samples: Vec::new(),
            knowledge_columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels in sample order; `None` if any sample is unlabeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Knowledge vectors as a feature matrix. Fails if any sample lacks one.
    pub fn knowledge_matrix(&self) -> Result<FeatureMatrix<T>> {
        let width = self.knowledge_columns.len();
        let mut rows = Array2::<T>::zeros((self.samples.len(), width));
        for (i, s) in self.samples.iter().enumerate() {
            let k = s.knowledge.as_ref().ok_or_else(|| {
                Error::invalid(format!("sample `{}` has no knowledge vector", s.id))
            })?;
            if k.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    found: k.len(),
                });
            }
            rows.row_mut(i).assign(k);
        }
        FeatureMatrix::new(
            self.knowledge_columns.clone(),
            self.samples.iter().map(|s| s.id.clone()).collect(),
            rows,
            FeatureSource::Knowledge,
        )
    }
}

/// A single invariant violation reported by [`validate_domain`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Violation {
    pub sample_id: Option<String>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sample_id {
            Some(id) => write!(f, "sample `{id}`: {}", self.rule),
            None => f.write_str(&self.rule),
        }
    }
}

/// Checks every domain and sample invariant and reports all violations.
///
/// The returned list is sorted, so it does not depend on sample order.
pub fn validate_domain<T: Scalar>(domain: &Domain<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let global = |rule: &str| Violation {
        sample_id: None,
        rule: rule.to_string(),
    };

    match domain.kind {
        DomainKind::Source if domain.samples.len() < MIN_SOURCE_SAMPLES => {
            out.push(global("source requires ≥ 4 samples"));
        }
        DomainKind::Target if domain.samples.is_empty() => {
            out.push(global("domain has no samples"));
        }
        _ => {}
    }

    let names: HashSet<&str> = domain
        .knowledge_columns
        .iter()
        .map(String::as_str)
        .collect();
    if names.len() != domain.knowledge_columns.len() {
        out.push(global("knowledge column names are not unique"));
    }

    let mut seen = HashSet::new();
    for s in &domain.samples {
        let v = |rule: &str| Violation {
            sample_id: Some(s.id.clone()),
            rule: rule.to_string(),
        };
        if !seen.insert(s.id.as_str()) {
            out.push(v("duplicate sample id"));
        }
        if s.trajectory.is_none() && s.knowledge.is_none() {
            out.push(v("neither trajectory nor knowledge present"));
        }
        if let Some(tr) = &s.trajectory {
            if tr.nrows() < 2 {
                out.push(v("trajectory needs at least 2 steps"));
            }
            if tr.ncols() == 0 {
                out.push(v("trajectory has no state variables"));
            }
            if tr.iter().any(|x| !x.is_finite()) {
                out.push(v("trajectory contains non-finite values"));
            }
        }
        if let Some(k) = &s.knowledge {
            if k.len() != domain.knowledge_columns.len() {
                out.push(v("knowledge length differs from domain knowledge columns"));
            }
            if k.iter().any(|x| !x.is_finite()) {
                out.push(v("knowledge contains non-finite values"));
            }
        }
        if domain.kind == DomainKind::Source && s.label.is_none() {
            out.push(v("source sample is unlabeled"));
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Where the columns of a [`FeatureMatrix`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    DataDerived,
    Knowledge,
    Fused,
}

/// Per-sample causal-factor vectors with named columns and row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    columns: Vec<String>,
    ids: Vec<String>,
    rows: Array2<T>,
    source: FeatureSource,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(
        columns: Vec<String>,
        ids: Vec<String>,
        rows: Array2<T>,
        source: FeatureSource,
    ) -> Result<Self> {
        if columns.len() != rows.ncols() {
            return Err(Error::DimensionMismatch {
                expected: columns.len(),
                found: rows.ncols(),
            });
        }
        if ids.len() != rows.nrows() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                found: rows.nrows(),
            });
        }
        let unique: HashSet<&str> = columns.iter().map(String::as_str).collect();
        if unique.len() != columns.len() {
            return Err(Error::invalid("feature column names must be unique"));
        }
        if let Some((r, _)) = rows
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                context: "feature matrix".into(),
                row: r,
            });
        }
        Ok(Self {
            columns,
            ids,
            rows,
            source,
        })
    }

    /// Builds a matrix with ids `row0, row1, ...`.
    pub fn with_default_ids(
        columns: Vec<String>,
        rows: Array2<T>,
        source: FeatureSource,
    ) -> Result<Self> {
        let ids = (0..rows.nrows()).map(|i| format!("row{i}")).collect();
        Self::new(columns, ids, rows, source)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &Array2<T> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.rows.row(i)
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Keeps the named columns in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::invalid(format!("unknown feature column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = self.rows.select(Axis(1), &idx);
        Self::new(names.to_vec(), self.ids.clone(), rows, self.source)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: self.rows.select(Axis(0), idx),
            source: self.source,
        }
    }

    /// Same matrix with `f` applied to the value array. Fails if the result is non-finite.
    pub fn map_rows(&self, f: impl FnOnce(&Array2<T>) -> Array2<T>) -> Result<Self> {
        Self::new(
            self.columns.clone(),
            self.ids.clone(),
            f(&self.rows),
            self.source,
        )
    }

    /// Errors with the first position where `self`'s columns differ from `expected`.
    pub fn check_columns(&self, expected: &[String]) -> Result<()> {
        let n = self.columns.len().max(expected.len());
        for i in 0..n {
            let want = expected.get(i).map(String::as_str).unwrap_or("<none>");
            let got = self.columns.get(i).map(String::as_str).unwrap_or("<none>");
            if want != got {
                return Err(Error::ColumnMismatch {
                    position: i,
                    expected: want.to_string(),
                    found: got.to_string(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 over column names, ids and the IEEE bit patterns of the values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for id in &self.ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        for v in self.rows.iter() {
            h.update(v.as_f64().to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labeled_source(n: usize) -> Domain<f64> {
        let mut d = Domain::new("src", DomainKind::Source);
        d.knowledge_columns = vec!["k0".into(), "k1".into()];
        for i in 0..n {
            d.samples.push(
                DomainSample::new(format!("s{i}"))
                    .with_trajectory(array![[0.0, 1.0], [1.0, 2.0], [2.0, 3.0]])
                    .with_knowledge(array![0.1, 0.2 + i as f64 * 0.01])
                    .with_label(i % 3),
            );
        }
        d
    }

    #[test]
    fn empty_source_reports_size() {
        let d: Domain<f64> = Domain::new("src", DomainKind::Source);
        let v = validate_domain(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "source requires ≥ 4 samples");
    }

    #[test]
    fn unlabeled_source_sample_is_named() {
        let mut d = labeled_source(6);
        d.samples[3].label = None;
        let v = validate_domain(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].sample_id.as_deref(), Some("s3"));
        assert!(v[0].rule.contains("unlabeled"));
    }

    #[test]
    fn well_formed_source_is_clean() {
        assert!(validate_domain(&labeled_source(10)).is_empty());
    }

    #[test]
    fn catches_sample_level_rules() {
        let mut d = labeled_source(5);
        d.samples[0].trajectory = Some(array![[f64::NAN, 1.0], [0.0, 1.0]]);
        d.samples[1].trajectory = Some(array![[1.0, 1.0]]);
        d.samples[2].knowledge = Some(array![0.5]);
        d.samples[4].trajectory = None;
        d.samples[4].knowledge = None;
        let v = validate_domain(&d);
        let ids: Vec<_> = v.iter().filter_map(|x| x.sample_id.clone()).collect();
        assert_eq!(ids, vec!["s0", "s1", "s2", "s4"]);
    }

    #[test]
    fn validation_is_order_independent() {
        let mut d = labeled_source(8);
        d.samples[2].label = None;
        d.samples[5].trajectory = Some(array![[1.0, f64::INFINITY], [0.0, 0.0]]);
        let a = validate_domain(&d);
        d.samples.reverse();
        let b = validate_domain(&d);
        assert_eq!(a, b);
        assert_eq!(validate_domain(&d), b);
    }

    #[test]
    fn target_needs_no_labels() {
        let mut d = labeled_source(3);
        d.kind = DomainKind::Target;
        for s in &mut d.samples {
            s.label = None;
        }
        assert!(validate_domain(&d).is_empty());
    }

    #[test]
    fn feature_matrix_rejects_bad_shapes() {
        let rows = array![[1.0, 2.0]];
        assert!(FeatureMatrix::with_default_ids(
            vec!["a".into()],
            rows.clone(),
            FeatureSource::DataDerived
        )
        .is_err());
        assert!(FeatureMatrix::with_default_ids(
            vec!["a".into(), "a".into()],
            rows,
            FeatureSource::DataDerived
        )
        .is_err());
        let bad = array![[1.0, f64::NAN]];
        let err = FeatureMatrix::with_default_ids(
            vec!["a".into(), "b".into()],
            bad,
            FeatureSource::DataDerived,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, .. }));
    }

    #[test]
    fn column_check_names_first_mismatch() {
        let fm = FeatureMatrix::with_default_ids(
            vec!["a".into(), "b".into(), "c".into()],
            array![[1.0, 2.0, 3.0]],
            FeatureSource::DataDerived,
        )
        .unwrap();
        let err = fm
            .check_columns(&["a".into(), "c".into(), "b".into()])
            .unwrap_err();
        match err {
            Error::ColumnMismatch {
                position,
                expected,
                found,
            } => {
                assert_eq!(position, 1);
                assert_eq!(expected, "c");
                assert_eq!(found, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn knowledge_matrix_from_domain() {
        let d = labeled_source(4);
        let km = d.knowledge_matrix().unwrap();
        assert_eq!(km.columns(), &["k0".to_string(), "k1".to_string()]);
        assert_eq!(km.n_rows(), 4);
        assert_eq!(km.source(), FeatureSource::Knowledge);
    }
}
