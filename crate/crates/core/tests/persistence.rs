use std::fs;

use confgap::persistence::{self, ArtifactKind, SCHEMA_VERSION};
use confgap::{
    ablation_search, dcb_compute, sdcd, CalibrationOptions, DcbCalibration64, DomainPair, Error,
};
use confgap::{AblationTrace, FeatureMatrix64, FeatureSource, SdcdReport64, Strategy};
use ndarray::Array2;

fn grid(rows: usize, cols: usize, offset: f64) -> FeatureMatrix64 {
    let values = Array2::from_shape_fn((rows, cols), |(i, j)| {
        ((i * 31 + j * 17) % 23) as f64 / 7.0 + (i as f64 * 0.37 + j as f64).sin() + offset
    });
    let names = (0..cols).map(|j| format!("c{j}")).collect();
    FeatureMatrix64::with_default_ids(names, values, FeatureSource::DataDerived).unwrap()
}

#[test]
fn pipeline_artifacts_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let source = grid(90, 3, 0.0);
    let target = grid(40, 3, 0.8);
    let cal = dcb_compute(&source, &CalibrationOptions::default()).unwrap();
    let report = sdcd("shifted", &target, &source, &cal).unwrap();
    let trace = ablation_search(
        &[DomainPair::new("p", source.clone(), target.clone())],
        &["c0".to_string(), "c2".to_string()],
        &CalibrationOptions::default(),
        Strategy::ExhaustiveSmall,
    )
    .unwrap();

    let cal_path = persistence::artifact_path(dir.path(), "cal");
    let rep_path = persistence::artifact_path(dir.path(), "report");
    let trace_path = persistence::artifact_path(dir.path(), "trace");
    persistence::save_payload(&cal, Some(serde_json::json!({"alpha": 0.05})), &cal_path).unwrap();
    persistence::save_payload(&report, None, &rep_path).unwrap();
    persistence::save_payload(&trace, None, &trace_path).unwrap();

    let env = persistence::load(&cal_path).unwrap();
    assert_eq!(env.schema_version, SCHEMA_VERSION);
    assert_eq!(env.kind, ArtifactKind::Calibration);
    assert_eq!(env.config().unwrap()["alpha"], 0.05);
    assert_eq!(env.data::<DcbCalibration64>().unwrap(), cal);
    assert_eq!(
        persistence::load_payload::<SdcdReport64>(&rep_path).unwrap(),
        report
    );
    assert_eq!(
        persistence::load_payload::<AblationTrace>(&trace_path).unwrap(),
        trace
    );

    let reloaded = sdcd(
        "shifted",
        &target,
        &source,
        &env.data::<DcbCalibration64>().unwrap(),
    )
    .unwrap();
    assert_eq!(reloaded, report);
}

#[test]
fn loading_the_wrong_kind_fails() {
    let dir = tempfile::tempdir().unwrap();
    let source = grid(60, 2, 0.0);
    let cal = dcb_compute(&source, &CalibrationOptions::default()).unwrap();
    let path = persistence::artifact_path(dir.path(), "cal");
    persistence::save_payload(&cal, None, &path).unwrap();
    assert!(matches!(
        persistence::load_payload::<SdcdReport64>(&path),
        Err(Error::KindMismatch { .. })
    ));
}

#[test]
fn every_single_byte_flip_in_the_payload_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dcb_compute(&grid(60, 2, 0.0), &CalibrationOptions::default()).unwrap();
    let path = persistence::artifact_path(dir.path(), "cal");
    persistence::save_payload(&cal, None, &path).unwrap();
    let original = fs::read(&path).unwrap();
    let text = String::from_utf8(original.clone()).unwrap();
    let start = text.find("\"payload\"").unwrap();
    let mut checked = 0;
    for i in start..original.len() {
        if !original[i].is_ascii_digit() {
            continue;
        }
        let mut bytes = original.clone();
        bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
        fs::write(&path, &bytes).unwrap();
        assert!(
            persistence::load(&path).is_err(),
            "flip at byte {i} went unnoticed"
        );
        checked += 1;
    }
    assert!(checked > 20);
}

#[test]
fn large_feature_sets_use_a_verified_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let features = grid(50, 4, 0.25);
    let path = persistence::artifact_path(dir.path(), "features");
    persistence::save_features(&features, &[], None, &path, 10).unwrap();
    let side = dir.path().join("features.features.csv");
    assert!(side.exists());
    let (loaded, doc) = persistence::load_features::<f64>(&path).unwrap();
    assert_eq!(loaded, features);
    assert!(doc.rows.is_none());

    let mut csv = fs::read_to_string(&side).unwrap();
    csv.push_str("extra,1,2,3,4\n");
    fs::write(&side, csv).unwrap();
    assert!(matches!(
        persistence::load_features::<f64>(&path),
        Err(Error::HashMismatch { .. })
    ));
}

#[test]
fn saved_bytes_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dcb_compute(
        &grid(70, 3, 0.0),
        &CalibrationOptions::default().with_seed(9),
    )
    .unwrap();
    let a = persistence::ArtifactEnvelope::new(&cal, None).unwrap();
    let b = persistence::ArtifactEnvelope::new(&cal, None).unwrap();
    assert_eq!(a.content_hash, b.content_hash);
    let path = persistence::artifact_path(dir.path(), "cal");
    persistence::save(&a, &path).unwrap();
    assert_eq!(
        persistence::load(&path).unwrap().content_hash,
        a.content_hash
    );
}
