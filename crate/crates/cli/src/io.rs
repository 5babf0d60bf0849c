//! CSV formats read and written by the commands.
//!
//! Trajectories: `s,x0,x1,...` with one file per sample (id = file stem), or a
//! single long file `id,s,x0,...`. Features: `id` first, an optional `label`
//! column, then one column per feature.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use confgap::causal_extract::Exclusion;
use confgap::persistence::{self, write_atomic};
use confgap::{Domain64, FeatureMatrix64, FeatureSource};
use ndarray::Array2;

use crate::failure::{CliResult, Failure, InputContext, OutputContext};

/// Relative tolerance on row spacing.
const SPACING_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LabeledMatrix {
    pub features: FeatureMatrix64,
    pub labels: Option<Vec<usize>>,
}

/// Reads a features artifact (`*.json`) or a feature CSV.
pub fn read_features(path: &Path) -> CliResult<LabeledMatrix> {
    if path.extension().is_some_and(|e| e == "json") {
        let (features, _) = persistence::load_features::<f64>(path)
            .input(&format!("loading {}", path.display()))?;
        return Ok(LabeledMatrix {
            features,
            labels: None,
        });
    }
    read_feature_csv(path)
}

pub fn read_feature_csv(path: &Path) -> CliResult<LabeledMatrix> {
    let ctx = format!("reading {}", path.display());
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .input(&ctx)?;
    let header: Vec<String> = reader
        .headers()
        .input(&ctx)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("id") {
        return Err(Failure::usage(format!(
            "{}: first column must be `id`",
            path.display()
        )));
    }
    let label_col = header.iter().position(|h| h == "label");
    let feature_cols: Vec<usize> = (1..header.len())
        .filter(|&i| Some(i) != label_col)
        .collect();
    let columns: Vec<String> = feature_cols.iter().map(|&i| header[i].clone()).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.input(&ctx)?;
        ids.push(rec[0].to_string());
        for &c in &feature_cols {
            let v: f64 = rec[c].parse().input(&format!(
                "{}: row {} column `{}`",
                path.display(),
                r + 1,
                header[c]
            ))?;
            values.push(v);
        }
        if let Some(c) = label_col {
            let l: usize =
                rec[c]
                    .parse()
                    .input(&format!("{}: row {} label", path.display(), r + 1))?;
            labels.push(l);
        }
    }
    let rows = Array2::from_shape_vec((ids.len(), columns.len()), values).input(&ctx)?;
    let features =
        FeatureMatrix64::new(columns, ids, rows, FeatureSource::DataDerived).input(&ctx)?;
    Ok(LabeledMatrix {
        features,
        labels: label_col.map(|_| labels),
    })
}

pub fn feature_csv_bytes(
    features: &FeatureMatrix64,
    labels: Option<&[usize]>,
) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend(features.columns().iter().cloned());
    w.write_record(&header).output("writing csv")?;
    for (i, (id, row)) in features
        .ids()
        .iter()
        .zip(features.rows().outer_iter())
        .enumerate()
    {
        let mut rec = vec![id.clone()];
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).output("writing csv")?;
    }
    w.into_inner().output("writing csv")
}

pub fn write_feature_csv(
    path: &Path,
    features: &FeatureMatrix64,
    labels: Option<&[usize]>,
) -> CliResult<()> {
    write_file(path, &feature_csv_bytes(features, labels)?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).output(&format!("writing {}", path.display()))
}

pub fn write_records(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).output("writing csv")?;
    for r in rows {
        w.write_record(&r).output("writing csv")?;
    }
    let bytes = w.into_inner().output("writing csv")?;
    write_file(path, &bytes)
}

/// Long-format trajectories `id,s,x0,...` of every sample in `domain`.
pub fn write_trajectories(path: &Path, domain: &Domain64, ds: f64) -> CliResult<()> {
    let n_states = domain
        .samples
        .iter()
        .find_map(|s| s.trajectory.as_ref().map(|t| t.ncols()))
        .unwrap_or(0);
    let mut header = vec!["id".to_string(), "s".to_string()];
    header.extend((0..n_states).map(|i| format!("x{i}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = domain.samples.iter().flat_map(|sample| {
        let traj = sample
            .trajectory
            .clone()
            .unwrap_or_else(|| Array2::zeros((0, n_states)));
        let id = sample.id.clone();
        (0..traj.nrows())
            .map(move |t| {
                let mut rec = vec![id.clone(), (t as f64 * ds).to_string()];
                rec.extend(traj.row(t).iter().map(|v| v.to_string()));
                rec
            })
            .collect::<Vec<_>>()
    });
    write_records(path, &header_refs, rows)
}

#[derive(Debug, Clone)]
pub struct RawSample {
    pub id: String,
    pub ds: f64,
    pub states: Array2<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectorySet {
    pub samples: Vec<RawSample>,
    pub exclusions: Vec<Exclusion>,
    pub n_states: usize,
}

impl TrajectorySet {
    pub fn total(&self) -> usize {
        self.samples.len() + self.exclusions.len()
    }

    fn exclude(&mut self, id: &str, reason: impl Into<String>) {
        self.exclusions.push(Exclusion {
            sample_id: id.to_string(),
            reason: reason.into(),
        });
    }

    /// Drops samples whose spacing differs from `ds`.
    pub fn enforce_spacing(&mut self, ds: f64) {
        let (keep, drop): (Vec<_>, Vec<_>) = std::mem::take(&mut self.samples)
            .into_iter()
            .partition(|s| ((s.ds - ds) / ds).abs() <= SPACING_TOL);
        for s in drop {
            self.exclude(&s.id, format!("row spacing {} differs from {ds}", s.ds));
        }
        self.samples = keep;
        self.exclusions
            .sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    }
}

/// Reads a trajectory directory or a single trajectory CSV.
pub fn read_trajectories(path: &Path) -> CliResult<TrajectorySet> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .input(&format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Failure::usage(format!(
                "no trajectory CSV files in {}",
                path.display()
            )));
        }
        let mut set = TrajectorySet::default();
        let mut header: Option<Vec<String>> = None;
        for file in &files {
            let id = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let (h, rows) = read_table(file)?;
            let n_states = state_count(&h, 0, file)?;
            match &header {
                Some(first) if *first != h => {
                    return Err(Failure::usage(format!(
                        "{}: header differs from the other trajectory files",
                        file.display()
                    )))
                }
                _ => header = Some(h),
            }
            set.n_states = n_states;
            push_sample(&mut set, &id, rows.iter().map(|r| &r[..]).collect());
        }
        set.exclusions.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        return Ok(set);
    }
    let (header, rows) = read_table(path)?;
    let mut set = TrajectorySet::default();
    if header.first().map(String::as_str) == Some("id") {
        set.n_states = state_count(&header, 1, path)?;
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<&[String]>> = HashMap::new();
        for r in &rows {
            let id = r[0].clone();
            groups
                .entry(id.clone())
                .or_insert_with(|| {
                    order.push(id);
                    Vec::new()
                })
                .push(&r[1..]);
        }
        for id in order {
            let g = groups.remove(&id).unwrap_or_default();
            push_sample(&mut set, &id, g);
        }
    } else {
        set.n_states = state_count(&header, 0, path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        push_sample(&mut set, &id, rows.iter().map(|r| &r[..]).collect());
    }
    if set.total() == 0 {
        return Err(Failure::usage(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    set.exclusions.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(set)
}

fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let ctx = format!("reading {}", path.display());
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .input(&ctx)?;
    let header = reader
        .headers()
        .input(&ctx)?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .input(&ctx)?;
    Ok((header, rows))
}

/// Checks `[prefix.., s, x0, x1, ...]` and returns the number of states.
fn state_count(header: &[String], s_pos: usize, path: &Path) -> CliResult<usize> {
    let ok = header.len() > s_pos + 1
        && header[s_pos] == "s"
        && header[s_pos + 1..]
            .iter()
            .enumerate()
            .all(|(i, h)| *h == format!("x{i}"));
    if !ok {
        let want = if s_pos == 1 {
            "id,s,x0,..."
        } else {
            "s,x0,..."
        };
        return Err(Failure::usage(format!(
            "{}: expected header `{want}`, found `{}`",
            path.display(),
            header.join(",")
        )));
    }
    Ok(header.len() - s_pos - 1)
}

/// Parses `s,x0,...` rows into a sample, or records why it was excluded.
fn push_sample(set: &mut TrajectorySet, id: &str, rows: Vec<&[String]>) {
    let n_states = set.n_states;
    if rows.len() < 3 {
        set.exclude(id, format!("only {} rows", rows.len()));
        return;
    }
    let mut s = Vec::with_capacity(rows.len());
    let mut states = Array2::zeros((rows.len(), n_states));
    for (t, r) in rows.iter().enumerate() {
        let parsed: Result<Vec<f64>, _> = r.iter().map(|v| v.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == n_states + 1 && v.iter().any(|x| !x.is_finite()) => {
                set.exclude(id, format!("row {} has a non-finite value", t + 1));
                return;
            }
            Ok(v) if v.len() == n_states + 1 => {
                s.push(v[0]);
                for j in 0..n_states {
                    states[[t, j]] = v[j + 1];
                }
            }
            _ => {
                set.exclude(id, format!("row {} is not numeric", t + 1));
                return;
            }
        }
    }
    let ds = s[1] - s[0];
    if !(ds.is_finite() && ds > 0.0) {
        set.exclude(id, "s is not increasing");
        return;
    }
    if s.windows(2)
        .any(|w| (((w[1] - w[0]) - ds) / ds).abs() > SPACING_TOL)
    {
        set.exclude(id, "s is not evenly spaced");
        return;
    }
    set.samples.push(RawSample {
        id: id.to_string(),
        ds,
        states,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn long_format_groups_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.csv",
            "id,s,x0\nb,0,1\nb,0.5,2\nb,1,3\na,0,1\na,0.5,1\na,1,1\nc,0,1\nc,0.7,1\nc,1,1\n",
        );
        let set = read_trajectories(&p).unwrap();
        assert_eq!(
            set.samples
                .iter()
                .map(|s| s.id.as_str())
                .collect::<Vec<_>>(),
            ["b", "a"]
        );
        assert_eq!(set.exclusions.len(), 1);
        assert_eq!(set.exclusions[0].sample_id, "c");
        assert_eq!(set.samples[0].states[[2, 0]], 3.0);
        assert!((set.samples[0].ds - 0.5).abs() < 1e-12);
    }

    #[test]
    fn directory_of_files() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "one.csv", "s,x0,x1\n0,1,2\n1,1,2\n2,1,2\n");
        write(dir.path(), "two.csv", "s,x0,x1\n0,1,2\n1,x,2\n2,1,2\n");
        write(dir.path(), "notes.txt", "ignored");
        let set = read_trajectories(dir.path()).unwrap();
        assert_eq!(set.n_states, 2);
        assert_eq!(set.samples.len(), 1);
        assert_eq!(set.exclusions[0].sample_id, "two");
    }

    #[test]
    fn bad_inputs_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_trajectories(dir.path()),
            Err(Failure::Usage(_))
        ));
        let p = write(dir.path(), "bad.csv", "t,x0\n0,1\n");
        assert!(matches!(read_trajectories(&p), Err(Failure::Usage(_))));
        assert!(matches!(
            read_trajectories(&dir.path().join("missing.csv")),
            Err(Failure::Usage(_))
        ));
    }

    #[test]
    fn feature_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "f.csv",
            "id,a,label,b\nr0,0.1,2,3\nr1,-1e-3,0,4.5\n",
        );
        let m = read_feature_csv(&p).unwrap();
        assert_eq!(m.features.columns(), ["a", "b"]);
        assert_eq!(m.labels, Some(vec![2, 0]));
        let out = dir.path().join("g.csv");
        write_feature_csv(&out, &m.features, m.labels.as_deref()).unwrap();
        let back = read_feature_csv(&out).unwrap();
        assert_eq!(back.features, m.features);
        assert_eq!(back.labels, m.labels);
    }

    #[test]
    fn feature_csv_needs_id_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f.csv", "a,id\n1,r0\n");
        assert!(matches!(read_feature_csv(&p), Err(Failure::Usage(_))));
    }
}
