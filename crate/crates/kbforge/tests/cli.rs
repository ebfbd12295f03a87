//! Exit-code and output contract of the `kbforge` binary:
//! 0 on success, 1 on validation findings, 2 on stage failure.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kbforge"))
}

fn fixture_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/spouse_toy/config.json")
        .to_string_lossy()
        .into_owned()
}

#[test]
fn validate_ok_exits_zero() {
    let out = bin()
        .args(["validate", "--config", &fixture_config()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("configuration ok"));
}

#[test]
fn validate_findings_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = std::fs::read_to_string(fixture_config())
        .unwrap()
        .replace("\"fractions\": [0.7, 0.15, 0.15]", "\"fractions\": [0.6, 0.3, 0.2]");
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, bad).unwrap();

    let out = bin()
        .args(["validate", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("finding: holdout"));
}

#[test]
fn run_success_exits_zero_and_prints_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("artifacts");
    let out = bin()
        .args([
            "run",
            "--config",
            &fixture_config(),
            "--output",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("calibration gap"));
    assert!(stdout.contains("artifacts:"));
    assert!(out_dir.join("manifest.json").is_file());
}

#[test]
fn stage_failure_exits_two() {
    // missing dependency: calibrate with no prior artifacts
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("artifacts");
    let out = bin()
        .args([
            "run",
            "--config",
            &fixture_config(),
            "--output",
            out_dir.to_str().unwrap(),
            "--stages",
            "calibrate",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("requires missing artifact"),
        "stderr: {stderr}"
    );
}

#[test]
fn unknown_stage_exits_one() {
    let out = bin()
        .args([
            "run",
            "--config",
            &fixture_config(),
            "--stages",
            "frobnicate",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}
