//! End-to-end checks of the command-line interface: exit codes, validation,
//! run outputs, manifest replay.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ccmcf"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("ccmcf_cli_{tag}_{}", std::process::id()));
    fs::create_dir_all(&d).unwrap();
    d
}

const TINY_SCENARIO: &str = r#"
name = "cli_tiny"
study = "mdl-spectrum"
tags = "ase"
engine = "matrix-oracle"
num_realizations = 200
master_seed = 11

[spectrum]
num_modes = 4
num_sections = 32
sigma_g = 0.05
"#;

#[test]
fn presets_listed() {
    let out = bin().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["fig1_mcf", "fig3a_link", "fig7_desk"] {
        assert!(text.contains(name), "missing preset {name}");
    }
}

#[test]
fn validate_exit_codes() {
    let ok = bin().args(["validate", "preset:fig3a_link"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));

    let missing = bin().args(["validate", "preset:nope"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let dir = temp_dir("validate");
    let bad = dir.join("bad.toml");
    fs::write(&bad, TINY_SCENARIO.replace("num_modes = 4", "num_modes = 3")).unwrap();
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("num_modes"), "unexpected message: {err}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn run_writes_outputs_and_replays_bit_exactly() {
    let dir = temp_dir("run");
    let scenario = dir.join("tiny.toml");
    fs::write(&scenario, TINY_SCENARIO).unwrap();

    let out_a = dir.join("a");
    let status = bin()
        .arg("run")
        .arg(&scenario)
        .args(["--workers", "2", "--out"])
        .arg(&out_a)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for f in ["records.tsv", "summary.tsv", "manifest.json", "hist_mixture.tsv"] {
        assert!(out_a.join(f).exists(), "missing {f}");
    }

    // Replay from the manifest with a different worker count.
    let out_b = dir.join("b");
    let status = bin()
        .arg("run")
        .arg(out_a.join("manifest.json"))
        .args(["--workers", "1", "--out"])
        .arg(&out_b)
        .output()
        .unwrap();
    assert!(status.status.success());
    let a = fs::read_to_string(out_a.join("summary.tsv")).unwrap();
    let b = fs::read_to_string(out_b.join("summary.tsv")).unwrap();
    assert_eq!(a, b, "manifest replay changed the summary");
    let ha = fs::read_to_string(out_a.join("hist_mixture.tsv")).unwrap();
    let hb = fs::read_to_string(out_b.join("hist_mixture.tsv")).unwrap();
    assert_eq!(ha, hb);

    // Report renders and mentions the scenario.
    let rep = bin()
        .arg("report")
        .arg(out_a.join("manifest.json"))
        .output()
        .unwrap();
    assert!(rep.status.success());
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("cli_tiny"));
    assert!(text.contains("mean_peak_to_peak_db"));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_missing_manifest_fails_with_runtime_code() {
    let out = bin()
        .args(["report", "/nonexistent/manifest.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
