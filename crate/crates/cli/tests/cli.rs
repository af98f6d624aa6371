use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn botstance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_botstance")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let out = botstance(&["default-config", "--output", "out", "--seed", "5"]);
    assert!(out.status.success());
    let mut text = String::from_utf8(out.stdout).unwrap();
    // shrink the synthetic corpus so the test stays quick
    text = text
        .replace("regular_apruebo = 3980", "regular_apruebo = 160")
        .replace("regular_rechazo = 970", "regular_rechazo = 40");
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let text = fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("regular_apruebo = 160"));
    assert!(text.contains("threshold = 0.55"));
    assert!(text.contains("anomaly_fraction = 0.075"));
}

#[test]
fn stage_failure_exits_nonzero_with_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = botstance(&["report", "--config", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `report` failed"), "{err}");
}

#[test]
fn run_selected_stages_then_continue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = botstance(&["run", "--config", &cfg, "--stages", "seed,synth,ingest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in ["synth", "ingest", "seed"] {
        assert!(dir.path().join("out").join(format!("manifest_{s}.json")).exists());
    }
    let out = botstance(&["featurize", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/features.mtx").exists());
}

#[test]
fn seed_override_conflicts_with_existing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert!(botstance(&["synth", "--config", &cfg]).status.success());
    let out = botstance(&["synth", "--config", &cfg, "--seed-override", "6"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `synth` failed"));
}

#[test]
fn bad_arguments_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = botstance(&["run", "--config", &cfg, "--stages", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown stage"));
    let out = botstance(&["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let out = botstance(&["ingest", "--config", &dir.path().join("missing.toml").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
}
