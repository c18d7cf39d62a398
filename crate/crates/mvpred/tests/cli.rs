//! CLI exit-code contract: 0 success, 1 usage errors, 2 data errors.

use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_mvpred");

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("spawn mvpred")
}

#[test]
fn missing_required_flag_is_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.jsonl");
    let res = run(&["synth", "--seed", "1"]); // --out missing
    assert_eq!(res.status.code(), Some(1));
    assert!(!res.stderr.is_empty());
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let res = run(&["frobnicate"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let res = run(&["--help"]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).contains("train"));
}

#[test]
fn invalid_config_value_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    assert_eq!(
        run(&["synth", "--out", manifest.to_str().unwrap(), "--videos", "30", "--quiet"])
            .status
            .code(),
        Some(0)
    );
    let res = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out-bundle",
        dir.path().join("b.bin").to_str().unwrap(),
        "--ratio",
        "1.5",
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn missing_manifest_is_data_error() {
    let res = run(&["validate", "--manifest", "/nonexistent/path.jsonl"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!res.stderr.is_empty());
}

#[test]
fn malformed_manifest_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("bad.jsonl");
    std::fs::write(&manifest, "{\"video_id\": \"v0\"\n").unwrap();
    let res = run(&["validate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn truncated_bundle_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    run(&["synth", "--out", manifest.to_str().unwrap(), "--videos", "20", "--unlabeled", "--quiet"]);
    let bundle = dir.path().join("b.bin");
    std::fs::write(&bundle, b"MVPB").unwrap();
    let res = run(&[
        "predict",
        "--bundle",
        bundle.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn validate_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    run(&[
        "synth",
        "--out",
        manifest.to_str().unwrap(),
        "--videos",
        "40",
        "--unplayable",
        "7",
        "--quiet",
    ]);
    let res = run(&["validate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("40"), "stdout: {text}");
    assert!(text.contains("33"), "stdout: {text}");
}
