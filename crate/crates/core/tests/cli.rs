use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn readflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_readflow"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(root: &Path) {
    let o = readflow(&[
        "gen",
        "--out",
        path(root),
        "--dims",
        "16,8,4",
        "--samples",
        "12",
        "--classifier",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_bundle_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = readflow(&["optimize", "--bundle", path(&dir.path().join("none"))]);
    assert_eq!(o.status.code(), Some(74));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing file"));
}

#[test]
fn malformed_bundle_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let bundle = dir.path().join("bundle");
    fs::write(bundle.join("layer000.bin"), [1u8; 5]).unwrap();
    let o = readflow(&["optimize", "--bundle", path(&bundle)]);
    assert_eq!(o.status.code(), Some(65));

    fs::write(bundle.join("manifest.json"), "{ not json").unwrap();
    let o = readflow(&["optimize", "--bundle", path(&bundle)]);
    assert_eq!(o.status.code(), Some(65));
}

#[test]
fn missing_acts_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    fs::remove_file(dir.path().join("acts/batch000.bin")).unwrap();
    let bundle = dir.path().join("bundle");
    let acts = dir.path().join("acts");
    let o = readflow(&["simulate", "--bundle", path(&bundle), "--acts", path(&acts)]);
    assert_eq!(o.status.code(), Some(74));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch000.bin"));
}

#[test]
fn plan_for_another_bundle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let other = dir.path().join("other");
    let o = readflow(&["gen", "--out", path(&other), "--dims", "16,6,4"]);
    assert!(o.status.success());
    let plan = dir.path().join("plan.json");
    let o = readflow(&[
        "optimize",
        "--bundle",
        path(&other.join("bundle")),
        "--out",
        path(&plan),
    ]);
    assert!(o.status.success());
    let o = readflow(&[
        "simulate",
        "--bundle",
        path(&dir.path().join("bundle")),
        "--acts",
        path(&dir.path().join("acts")),
        "--plan",
        path(&plan),
    ]);
    assert_eq!(o.status.code(), Some(65), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_and_unknown_point_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let bundle = dir.path().join("bundle");
    let acts = dir.path().join("acts");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"array": {"array_rows": 0, "array_cols": 4}}"#).unwrap();
    let o = readflow(&["optimize", "--bundle", path(&bundle), "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(65));

    let o = readflow(&[
        "accuracy",
        "--bundle",
        path(&bundle),
        "--acts",
        path(&acts),
        "--points",
        "nowhere",
    ]);
    assert_eq!(o.status.code(), Some(65));

    let model = dir.path().join("model.json");
    fs::write(&model, r#"{"p_flip": 1e-4, "p_base": 1e-3}"#).unwrap();
    let o = readflow(&[
        "inject",
        "--bundle",
        path(&bundle),
        "--acts",
        path(&acts),
        "--error-model",
        path(&model),
    ]);
    assert_eq!(o.status.code(), Some(65));
}

#[test]
fn reports_carry_provenance_and_traces_export() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let bundle = dir.path().join("bundle");
    let acts = dir.path().join("acts");
    let traces = dir.path().join("traces.csv");
    let o = readflow(&[
        "inject",
        "--bundle",
        path(&bundle),
        "--acts",
        path(&acts),
        "--seed",
        "5",
        "--traces",
        path(&traces),
    ]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["provenance"]["seeds"]["error_model"], 5);
    assert_eq!(report["provenance"]["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["layers"].as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(&traces).unwrap();
    assert!(csv.starts_with("layer,cluster,mac_row,mac_col,cycle,psum,flip,error\n"));
    // 12 samples x (8 outputs x 17 values + 4 outputs x 9 values)
    assert_eq!(csv.lines().count(), 1 + 12 * (8 * 17 + 4 * 9));
}

#[test]
fn csv_plan_output_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let o = readflow(&[
        "optimize",
        "--bundle",
        path(&dir.path().join("bundle")),
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(65));
}
