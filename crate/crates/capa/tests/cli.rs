//! Integration tests driving the compiled `capa-kit` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn capa_kit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capa-kit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(&body).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn capacity_config() -> serde_json::Value {
    serde_json::json!({
        "experiment": "p2p-capacity",
        "scene": {
            "frequency_hz": 2.4e9,
            "tx_aperture": {"kind": "linear", "len_x": 0.5},
            "rx_aperture": {"kind": "linear", "len_x": 0.5},
            "distance_m": 5.0
        },
        "budget": {"total_power": 1.0, "noise_power": 1e-10},
        "sweep": {"variable": "aperture_length", "grid": [0.25, 0.5]},
        "seed": 0
    })
}

#[test]
fn capacity_run_writes_versioned_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "capacity.json", capacity_config());
    let out = dir.path().join("out");
    let result = capa_kit(&["capacity", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let csv = std::fs::read_to_string(out.join("capacity.csv")).unwrap();
    assert!(csv.starts_with("# schema_version=1\n"), "missing schema header");
    assert!(csv.lines().count() > 2, "no data rows");

    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("capacity_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["task"], "capacity");
    assert_eq!(summary["seed"], 0);
    assert_eq!(summary["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "capacity.json", capacity_config());
    for out in ["a", "b"] {
        let out = dir.path().join(out);
        let result = capa_kit(&["spectrum", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    }
    let a = std::fs::read(dir.path().join("a/spectrum.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/spectrum.csv")).unwrap();
    assert_eq!(a, b, "spectrum.csv differs between identical runs");
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "capacity.json", capacity_config());
    let result = capa_kit(&["validate", "--config", &config]);
    assert!(result.status.success());
    assert!(String::from_utf8_lossy(&result.stdout).contains("ok"));
}

#[test]
fn empty_sweep_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = capacity_config();
    cfg["sweep"]["grid"] = serde_json::json!([]);
    let config = write_config(dir.path(), "empty.json", cfg);
    let result = capa_kit(&["validate", "--config", &config]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("sweep"));
}

#[test]
fn unknown_config_key_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = capacity_config();
    cfg["scene"]["frequancy_hz"] = serde_json::json!(2.4e9);
    let config = write_config(dir.path(), "typo.json", cfg);
    let result = capa_kit(&["capacity", "--config", &config]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("frequancy_hz"));
}

#[test]
fn subcommand_and_experiment_id_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "capacity.json", capacity_config());
    let result = capa_kit(&["beamform", "--config", &config]);
    assert!(!result.status.success());
    let err = String::from_utf8_lossy(&result.stderr);
    assert!(err.contains("beamform") && err.contains("p2p-capacity"), "{err}");
}

#[test]
fn missing_config_file_fails_cleanly() {
    let result = capa_kit(&["capacity", "--config", "/nonexistent/nope.json"]);
    assert!(!result.status.success());
    assert!(!String::from_utf8_lossy(&result.stderr).is_empty());
}
