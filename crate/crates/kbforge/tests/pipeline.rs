//! End-to-end tests of the staged pipeline against the bundled toy spouse
//! application.

mod common;

use common::{fixture_dir, load_artifacts, run_toy, toy_config};
use kbforge::engine::exact_marginals;
use kbforge::pipeline::{Pipeline, PipelineError, Stage};
use std::fs;

#[test]
fn toy_pipeline_produces_full_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let outcome = run_toy(toy_config(), &out);

    for artifact in [
        "manifest.json",
        "store/sentences.tsv",
        "store/spouse_cand.tsv",
        "store/pair_feature.tsv",
        "labels.tsv",
        "holdout.tsv",
        "graph/variables.tsv",
        "graph/factors.tsv",
        "graph/weights.tsv",
        "weights.tsv",
        "marginals.tsv",
        "calibration.json",
        "errors.json",
    ] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }
    assert_eq!(outcome.manifest.stages.len(), 8);

    // marginal count equals candidate count
    let config = toy_config();
    let artifacts = load_artifacts(&config, &out);
    let candidates = artifacts.store.relation("spouse_cand").unwrap().rows.len();
    assert_eq!(artifacts.marginals.len(), candidates);
    assert_eq!(artifacts.graph.variables.len(), candidates);
    assert!(candidates > 50, "fixture should be non-trivial");
}

#[test]
fn toy_marginals_match_per_component_exact_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_toy(toy_config(), &out);
    let config = toy_config();
    let artifacts = load_artifacts(&config, &out);

    // final inference ran with learned weights and evidence cleared; every
    // connected component is small enough for the exact oracle to audit
    let inference_graph = artifacts
        .graph
        .with_weight_values(&artifacts.learned)
        .clear_evidence();
    let components = inference_graph.connected_components();
    assert!(components.iter().all(|c| c.len() <= 16));

    let mut exact = vec![0.0f64; inference_graph.variables.len()];
    for component in components {
        let sub = inference_graph.subgraph(&component);
        let m = exact_marginals(&sub).unwrap();
        for (local, &global) in component.iter().enumerate() {
            exact[global] = m.probabilities[local];
        }
    }
    for (i, (key, sampled)) in artifacts.marginals.iter().enumerate() {
        assert!(
            (sampled - exact[i]).abs() <= 0.03,
            "{}: gibbs {sampled} vs exact {}",
            key.display(),
            exact[i]
        );
    }
}

#[test]
fn stage_reruns_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_toy(toy_config(), &out);

    let before_marginals = fs::read(out.join("marginals.tsv")).unwrap();
    let before_vars = fs::read(out.join("graph/variables.tsv")).unwrap();
    let before_calibration = fs::read(out.join("calibration.json")).unwrap();
    let before_errors = fs::read(out.join("errors.json")).unwrap();

    for stages in [
        vec![Stage::Ground],
        vec![Stage::Infer],
        vec![Stage::Calibrate, Stage::Errors],
    ] {
        Pipeline::new(toy_config(), fixture_dir(), Some(out.clone()))
            .unwrap()
            .run(&stages)
            .unwrap();
    }

    assert_eq!(fs::read(out.join("marginals.tsv")).unwrap(), before_marginals);
    assert_eq!(fs::read(out.join("graph/variables.tsv")).unwrap(), before_vars);
    assert_eq!(
        fs::read(out.join("calibration.json")).unwrap(),
        before_calibration
    );
    assert_eq!(fs::read(out.join("errors.json")).unwrap(), before_errors);
}

#[test]
fn calibrate_without_marginals_names_the_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    // produce store, labels, holdout, but no inference artifacts
    Pipeline::new(toy_config(), fixture_dir(), Some(out.clone()))
        .unwrap()
        .run(&[Stage::Load, Stage::Extract, Stage::Supervise])
        .unwrap();

    let err = Pipeline::new(toy_config(), fixture_dir(), Some(out))
        .unwrap()
        .run(&[Stage::Calibrate])
        .unwrap_err();
    match err {
        PipelineError::MissingDependency { stage, artifact } => {
            assert_eq!(stage, "calibrate");
            assert_eq!(artifact, "marginals.tsv");
        }
        other => panic!("unexpected error: {other}"),
    }
}

#[test]
fn mixed_config_hashes_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_toy(toy_config(), &out);

    let mut changed = toy_config();
    changed.sampler.seed += 1;
    let err = Pipeline::new(changed.clone(), fixture_dir(), Some(out.clone()))
        .unwrap()
        .run(&[Stage::Infer])
        .unwrap_err();
    assert!(matches!(err, PipelineError::ConfigHashMismatch { .. }));

    // a full rerun with the new config is allowed and refreshes the manifest
    let outcome = Pipeline::new(changed, fixture_dir(), Some(out))
        .unwrap()
        .run(&Stage::ALL)
        .unwrap();
    assert_eq!(outcome.manifest.stages.len(), 8);
}

#[test]
fn failed_stage_removes_partial_artifacts_and_reports_cause() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut config = toy_config();
    config.extractors[1].command = "sh -c 'echo kaboom >&2; exit 9'".into();

    let err = Pipeline::new(config, fixture_dir(), Some(out.clone()))
        .unwrap()
        .run(&Stage::ALL)
        .unwrap_err();
    match &err {
        PipelineError::StageFailed { stage, source } => {
            assert_eq!(*stage, "extract");
            assert!(source.to_string().contains("kaboom"), "{source}");
        }
        other => panic!("unexpected error: {other}"),
    }
    // the failed stage's outputs are gone, and no later artifacts exist
    assert!(!out.join("store").exists());
    assert!(!out.join("marginals.tsv").exists());
}

#[test]
fn validation_findings_block_the_run() {
    let mut config = toy_config();
    config.holdout.fractions = [0.6, 0.3, 0.2];
    let err = Pipeline::new(config, fixture_dir(), Some("unused".into()))
        .unwrap()
        .run(&Stage::ALL)
        .unwrap_err();
    match err {
        PipelineError::Findings(findings) => {
            assert_eq!(findings.len(), 1);
            assert!(findings[0].context.contains("holdout"));
        }
        other => panic!("unexpected error: {other}"),
    }
}

#[test]
fn full_rerun_reproduces_marginals_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    run_toy(toy_config(), &out_a);
    run_toy(toy_config(), &out_b);
    assert_eq!(
        fs::read(out_a.join("marginals.tsv")).unwrap(),
        fs::read(out_b.join("marginals.tsv")).unwrap()
    );
}
