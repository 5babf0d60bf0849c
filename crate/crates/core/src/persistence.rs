//! Versioned, hash-checked JSON artifacts.
//!
//! An artifact file holds an [`ArtifactEnvelope`] whose `payload` is
//! `{"config": ..., "data": ...}`. The content hash is SHA-256 over the
//! canonical payload bytes: keys sorted, floats in shortest round-trip form.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::causal_extract::Exclusion;
use crate::conformal::{DcbCalibration, SdcdReport};
use crate::domain::{FeatureMatrix, FeatureSource};
use crate::error::{Error, Result};
use crate::refinement::AblationTrace;
use crate::scalar::Scalar;
use crate::synthetic::{NoiseSweepTable, ShiftSweepPoint};

pub const SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_SUFFIX: &str = ".confgap.json";
pub const SIDECAR_SUFFIX: &str = ".features.csv";
/// Feature matrices with more entries than this go to a CSV sidecar.
pub const DEFAULT_SIDECAR_THRESHOLD: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Calibration,
    Features,
    SdcdReport,
    AblationTrace,
    SweepTable,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Calibration => "calibration",
            ArtifactKind::Features => "features",
            ArtifactKind::SdcdReport => "sdcd_report",
            ArtifactKind::AblationTrace => "ablation_trace",
            ArtifactKind::SweepTable => "sweep_table",
        }
    }
}

/// A document that can be stored as an artifact.
pub trait Payload: Serialize + DeserializeOwned {
    const KIND: ArtifactKind;

    /// Name of the first field holding NaN or an infinity.
    fn non_finite_field(&self) -> Option<String>;
}

fn first_bad<'a>(fields: impl IntoIterator<Item = (&'a str, f64)>) -> Option<String> {
    fields
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n.to_string())
}

impl<T: Scalar> Payload for DcbCalibration<T> {
    const KIND: ArtifactKind = ArtifactKind::Calibration;

    fn non_finite_field(&self) -> Option<String> {
        first_bad([
            ("sigma", self.sigma.as_f64()),
            ("d", self.d.as_f64()),
            ("residual_std", self.residual_std.as_f64()),
            ("interval_lo", self.interval_lo.as_f64()),
            ("interval_hi", self.interval_hi.as_f64()),
            ("alpha", self.alpha),
        ])
    }
}

impl<T: Scalar> Payload for SdcdReport<T> {
    const KIND: ArtifactKind = ArtifactKind::SdcdReport;

    fn non_finite_field(&self) -> Option<String> {
        first_bad(
            std::iter::once(("sdcd_percent", self.sdcd_percent.as_f64())).chain(
                self.residuals
                    .iter()
                    .map(|r| ("residuals.residual", r.residual.as_f64())),
            ),
        )
    }
}

impl Payload for AblationTrace {
    const KIND: ArtifactKind = ArtifactKind::AblationTrace;

    fn non_finite_field(&self) -> Option<String> {
        first_bad(
            [
                ("best_avg_sdcd", self.best_avg_sdcd),
                ("baseline_avg_sdcd", self.baseline_avg_sdcd),
            ]
            .into_iter()
            .chain(self.steps.iter().map(|s| ("steps.avg_sdcd", s.avg_sdcd)))
            .chain(self.steps.iter().flat_map(|s| {
                s.per_pair_sdcd
                    .values()
                    .map(|v| ("steps.per_pair_sdcd", *v))
            })),
        )
    }
}

impl Payload for NoiseSweepTable {
    const KIND: ArtifactKind = ArtifactKind::SweepTable;

    fn non_finite_field(&self) -> Option<String> {
        first_bad(self.rows.iter().flat_map(|r| {
            let head = [
                ("rows.psnr_db", r.psnr_db.unwrap_or(0.0)),
                ("rows.mean_sdcd", r.mean_sdcd),
                ("rows.correlation", r.correlation.unwrap_or(0.0)),
            ];
            head.into_iter().chain(r.entries.iter().flat_map(|e| {
                [
                    ("rows.entries.sdcd", e.sdcd),
                    ("rows.entries.accuracy", e.accuracy),
                ]
            }))
        }))
    }
}

/// Per-point results of a shift sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSweepTable {
    pub points: Vec<ShiftSweepPoint>,
    pub correlation: Option<f64>,
}

impl Payload for ShiftSweepTable {
    const KIND: ArtifactKind = ArtifactKind::SweepTable;

    fn non_finite_field(&self) -> Option<String> {
        first_bad(
            std::iter::once(("correlation", self.correlation.unwrap_or(0.0))).chain(
                self.points.iter().flat_map(|p| {
                    [
                        ("points.shift_level", p.shift_level),
                        ("points.sdcd", p.sdcd),
                        ("points.accuracy", p.accuracy),
                    ]
                }),
            ),
        )
    }
}

/// Relative location and digest of a feature sidecar CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub path: String,
    pub sha256: String,
}

/// Stored form of a feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesDoc<T> {
    pub source: FeatureSource,
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    /// Inline values; `None` when they live in the sidecar.
    pub rows: Option<Vec<Vec<T>>>,
    pub sidecar: Option<Sidecar>,
    pub fingerprint: String,
    #[serde(default)]
    pub exclusions: Vec<Exclusion>,
}

impl<T: Scalar> Payload for FeaturesDoc<T> {
    const KIND: ArtifactKind = ArtifactKind::Features;

    fn non_finite_field(&self) -> Option<String> {
        self.rows
            .as_ref()
            .and_then(|rows| first_bad(rows.iter().flatten().map(|v| ("rows", v.as_f64()))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEnvelope {
    pub schema_version: u32,
    pub kind: ArtifactKind,
    pub created_at: String,
    pub content_hash: String,
    pub payload: Value,
}

impl ArtifactEnvelope {
    /// Wraps `data` with the effective `config`, timestamps and hashes it.
    pub fn new<P: Payload>(data: &P, config: Option<Value>) -> Result<Self> {
        if let Some(field) = data.non_finite_field() {
            return Err(Error::NonFinitePayload(field));
        }
        let payload = json!({
            "config": config.unwrap_or(Value::Null),
            "data": serde_json::to_value(data)?,
        });
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            kind: P::KIND,
            created_at: timestamp(),
            content_hash: content_hash(&payload)?,
            payload,
        })
    }

    /// Typed payload data; fails if the kind does not match.
    pub fn data<P: Payload>(&self) -> Result<P> {
        if self.kind != P::KIND {
            return Err(Error::KindMismatch {
                expected: P::KIND.as_str().into(),
                found: self.kind.as_str().into(),
            });
        }
        let data = self.payload.get("data").cloned().unwrap_or(Value::Null);
        Ok(serde_json::from_value(data)?)
    }

    pub fn config(&self) -> Option<&Value> {
        self.payload.get("config").filter(|v| !v.is_null())
    }

    pub fn verify(&self) -> Result<()> {
        if self.schema_version > SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                found: self.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        let computed = content_hash(&self.payload)?;
        if computed != self.content_hash {
            return Err(Error::HashMismatch {
                recorded: self.content_hash.clone(),
                computed,
            });
        }
        Ok(())
    }

    /// Canonical file bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(&serde_json::to_value(self)?)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time, in UTC.
fn timestamp() -> String {
    let when = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    when.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn canonical_bytes(value: &Value) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(value)?)
}

pub fn content_hash(payload: &Value) -> Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_bytes(payload)?)))
}

pub fn artifact_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}{ARTIFACT_SUFFIX}"))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes the envelope after checking that its hash matches its payload.
pub fn save(envelope: &ArtifactEnvelope, path: &Path) -> Result<()> {
    envelope.verify()?;
    write_atomic(path, &envelope.to_bytes()?)
}

pub fn load(path: &Path) -> Result<ArtifactEnvelope> {
    let bytes = fs::read(path)?;
    let envelope: ArtifactEnvelope = serde_json::from_slice(&bytes)?;
    envelope.verify()?;
    Ok(envelope)
}

pub fn save_payload<P: Payload>(
    data: &P,
    config: Option<Value>,
    path: &Path,
) -> Result<ArtifactEnvelope> {
    let env = ArtifactEnvelope::new(data, config)?;
    save(&env, path)?;
    Ok(env)
}

pub fn load_payload<P: Payload>(path: &Path) -> Result<P> {
    load(path)?.data()
}

/// Sidecar path that belongs next to an artifact path.
fn sidecar_path(artifact: &Path) -> PathBuf {
    let name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(ARTIFACT_SUFFIX).unwrap_or(&name);
    artifact.with_file_name(format!("{stem}{SIDECAR_SUFFIX}"))
}

fn sidecar_bytes<T: Scalar>(features: &FeatureMatrix<T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("id").chain(features.columns().iter().map(String::as_str)))?;
    for (id, row) in features.ids().iter().zip(features.rows().outer_iter()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Saves a feature matrix, moving the values to a CSV sidecar when it has
/// more than `sidecar_threshold` entries.
pub fn save_features<T: Scalar>(
    features: &FeatureMatrix<T>,
    exclusions: &[Exclusion],
    config: Option<Value>,
    path: &Path,
    sidecar_threshold: usize,
) -> Result<ArtifactEnvelope> {
    let entries = features.n_rows() * features.n_cols();
    let (rows, sidecar) = if entries > sidecar_threshold {
        let bytes = sidecar_bytes(features)?;
        let side = sidecar_path(path);
        write_atomic(&side, &bytes)?;
        let rel = side
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        (
            None,
            Some(Sidecar {
                path: rel,
                sha256: hex::encode(Sha256::digest(&bytes)),
            }),
        )
    } else {
        (
            Some(features.rows().outer_iter().map(|r| r.to_vec()).collect()),
            None,
        )
    };
    let doc = FeaturesDoc {
        source: features.source(),
        columns: features.columns().to_vec(),
        ids: features.ids().to_vec(),
        rows,
        sidecar,
        fingerprint: features.fingerprint(),
        exclusions: exclusions.to_vec(),
    };
    save_payload(&doc, config, path)
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<(FeatureMatrix<T>, FeaturesDoc<T>)> {
    let doc: FeaturesDoc<T> = load_payload(path)?;
    let n_cols = doc.columns.len();
    let values: Vec<T> = match (&doc.rows, &doc.sidecar) {
        (Some(rows), _) => {
            if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    found: bad.len(),
                });
            }
            rows.iter().flatten().copied().collect()
        }
        (None, Some(side)) => {
            let side_path = path.with_file_name(&side.path);
            let bytes = fs::read(&side_path)?;
            let computed = hex::encode(Sha256::digest(&bytes));
            if computed != side.sha256 {
                return Err(Error::HashMismatch {
                    recorded: side.sha256.clone(),
                    computed,
                });
            }
            let mut reader = csv::Reader::from_reader(bytes.as_slice());
            let mut values = Vec::with_capacity(doc.ids.len() * n_cols);
            for (i, rec) in reader.records().enumerate() {
                let rec = rec?;
                if rec.len() != n_cols + 1 || rec.get(0) != doc.ids.get(i).map(String::as_str) {
                    return Err(Error::invalid(format!(
                        "sidecar row {i} does not match the artifact"
                    )));
                }
                for field in rec.iter().skip(1) {
                    let v: f64 = field.parse().map_err(|_| {
                        Error::invalid(format!("sidecar row {i}: bad number `{field}`"))
                    })?;
                    values.push(T::lit(v));
                }
            }
            values
        }
        (None, None) => {
            return Err(Error::invalid(
                "features artifact has neither rows nor sidecar",
            ))
        }
    };
    let rows = ndarray::Array2::from_shape_vec((doc.ids.len(), n_cols), values)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let matrix = FeatureMatrix::new(doc.columns.clone(), doc.ids.clone(), rows, doc.source)?;
    if matrix.fingerprint() != doc.fingerprint {
        return Err(Error::HashMismatch {
            recorded: doc.fingerprint.clone(),
            computed: matrix.fingerprint(),
        });
    }
    Ok((matrix, doc))
}
