//! Config loading, validation and the shipped files.

use std::io::Write;

use srl_core::config::{load_config, SimConfig, SCHEMA_VERSION};
use srl_core::kinematics::PlanarPose;
use srl_core::tracking::{read_csv, track, write_csv};
use srl_core::Error;

fn paths(e: &Error) -> Vec<String> {
    match e {
        Error::Invalid(v) => v.iter().map(|x| x.field.clone()).collect(),
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn default_round_trips_and_validates() {
    let cfg = SimConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.arm.stiffness_min, 70.0);
    assert_eq!(cfg.arm.stiffness_max, 8000.0);
    assert_eq!(SimConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn shipped_default_matches_code() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/default.json");
    assert_eq!(load_config(path).unwrap(), SimConfig::default());
}

#[test]
fn minimal_file_fills_defaults() {
    let cfg = SimConfig::from_json(&format!("{{\"schema_version\": {SCHEMA_VERSION}}}")).unwrap();
    assert_eq!(cfg, SimConfig::default());
    let cfg = SimConfig::from_json(r#"{"schema_version": 1, "stab": {"k_low": 100}}"#).unwrap();
    assert_eq!(cfg.medium, SimConfig::default().medium);
    assert_eq!(cfg.stab.k_low, 100.0);
}

#[test]
fn inverted_stiffness_bounds_name_the_field() {
    let e = SimConfig::from_json(r#"{"schema_version": 1, "arm": {"stiffness_min": 9000}}"#).unwrap_err();
    let p = paths(&e);
    assert!(p.iter().any(|f| f.starts_with("arm.stiffness")), "{p:?}");
    assert!(e.to_string().contains("arm.stiffness"));
}

#[test]
fn several_violations_are_reported_together() {
    let text = r#"{"schema_version": 1, "observer": {"gain": [-1, 50]}, "medium": {"k_c": 0}, "grid": {"l1": {"min": 10, "max": 5, "step": 1}}}"#;
    let p = paths(&SimConfig::from_json(text).unwrap_err());
    for want in ["observer.gain[0]", "medium.k_c", "grid.l1.min"] {
        assert!(p.iter().any(|f| f == want), "{want} missing from {p:?}");
    }
}

#[test]
fn wrong_version_and_unknown_fields_are_rejected() {
    let p = paths(&SimConfig::from_json(r#"{"schema_version": 2}"#).unwrap_err());
    assert_eq!(p, vec!["schema_version"]);
    assert!(matches!(SimConfig::from_json(r#"{"schema_version": 1, "bogus": 1}"#), Err(Error::Parse(_))));
    assert!(matches!(SimConfig::from_json(r#"{"schema_version": 1, "arm": {"mass": 1}}"#), Err(Error::Parse(_))));
    assert!(matches!(SimConfig::from_json("{}"), Err(Error::Parse(_))));
}

#[test]
fn dish_outside_region_is_invalid() {
    let text = r#"{"schema_version": 1, "task": {"dish_center": {"x": 0, "y": 100}}}"#;
    assert_eq!(paths(&SimConfig::from_json(text).unwrap_err()), vec!["task.dish_center"]);
}

#[test]
fn null_threshold_recalibrates() {
    let cfg = SimConfig::from_json(r#"{"schema_version": 1, "threshold": null}"#).unwrap();
    assert!(cfg.threshold.is_none());
    let c = cfg.threshold().unwrap();
    assert!(c.epsilon_r[0] > c.r_hat_max[0]);
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_config("/nonexistent/srl.json"), Err(Error::Io(_))));
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(b"{ not json").unwrap();
    assert!(matches!(load_config(f.path()), Err(Error::Parse(_))));
}

#[test]
fn track_csv_round_trips() {
    let cfg = SimConfig::default();
    let log = track(&cfg.track_inputs(cfg.threshold().unwrap()), &PlanarPose::new(-23.62, 650.69)).unwrap();
    let mut buf = Vec::new();
    write_csv(&log.rows, &mut buf).unwrap();
    assert_eq!(read_csv(buf.as_slice()).unwrap(), log.rows);
    let mut empty = Vec::new();
    write_csv(&[], &mut empty).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
}
