//! Stage orchestration contracts: dependencies, config hashing, artifact
//! ownership and validation.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use botstance::pipeline::{read_manifest, Pipeline, PipelineConfig, Stage};
use botstance::Error;

fn small_config(out: &Path, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::with_output(out, seed);
    cfg.synth = common::small_spec(400, 12);
    cfg.nullmodel.permutations = 20;
    cfg.classifier.gbt.rounds = 40;
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn report_without_upstream_names_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path(), 1)).unwrap();
    let err = p.run(&[Stage::Report]).unwrap_err();
    assert_eq!(err.stage, Stage::Report);
    assert!(matches!(err.source, Error::MissingStage { stage: "report", .. }), "{err}");
    assert!(err.to_string().contains("report"));
}

#[test]
fn invalid_config_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = small_config(&out, 1);
    cfg.bots.anomaly_fraction = 1.5;
    assert!(Pipeline::new(cfg).is_err());
    let mut cfg = small_config(&out, 1);
    cfg.seed = None;
    assert!(matches!(Pipeline::new(cfg), Err(Error::Config(_))));
    assert!(!out.exists());
}

#[test]
fn mixed_config_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(small_config(dir.path(), 1)).unwrap().run(&[Stage::Synth]).unwrap();
    let err = Pipeline::new(small_config(dir.path(), 2)).unwrap().run(&[Stage::Synth]).unwrap_err();
    assert!(matches!(err.source, Error::MixedConfig { .. }), "{err}");
}

#[test]
fn modified_upstream_artifact_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path(), 1)).unwrap();
    p.run(&[Stage::Synth, Stage::Ingest]).unwrap();
    fs::write(dir.path().join("corpus.jsonl"), "").unwrap();
    let err = p.run(&[Stage::Seed]).unwrap_err();
    assert!(matches!(err.source, Error::MissingStage { requires: "ingest", .. }), "{err}");
}

#[test]
fn full_run_writes_manifests_and_reruns_touch_only_their_own_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 7);
    let p = Pipeline::new(cfg.clone()).unwrap();
    p.run(&Stage::default_plan(&cfg)).unwrap();
    for stage in Stage::ALL {
        let m = read_manifest(&dir.path().join(botstance::pipeline::manifest_name(stage))).unwrap();
        assert_eq!(m.config_hash, p.config_hash());
        assert_eq!(m.master_seed, 7);
        assert_eq!(m.stage_seed, botstance::pipeline::stage_seed(7, stage));
        assert!(!m.artifacts.is_empty());
    }
    let before = snapshot(dir.path());
    p.run(&[Stage::Network, Stage::Report]).unwrap();
    let after = snapshot(dir.path());
    let own: Vec<&str> = vec![
        "manifest_network.json",
        "manifest_report.json",
    ];
    for (name, bytes) in &before {
        if !own.contains(&name.as_str()) {
            assert_eq!(&after[name], bytes, "{name} changed");
        }
    }
    assert_eq!(before.len(), after.len());
}

#[test]
fn config_file_paths_resolve_against_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Path::new("results"), 3);
    let path = dir.path().join("run.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let loaded = PipelineConfig::load(&path).unwrap();
    assert_eq!(loaded.paths.output, dir.path().join("results"));
    assert_eq!(loaded.config_hash(), cfg.config_hash());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let text = "seed = 1\n[paths]\noutput = \"o\"\n[bots]\nanomaly_fraction = 0.075\ncutof = \"2020-08-08\"\n";
    assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))));
}
