mod common;

use common::small_config;
use mortality_cli::compare::compare_paths;
use mortality_cli::config::{ModelKind, Selector};
use mortality_cli::run::{report_paths, run, RunManifest, RunOptions, StageStatus, STAGES};

#[test]
fn full_run_records_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&small_config(dir.path(), ModelKind::Dl), RunOptions::default()).unwrap();
    assert_eq!(m.stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), STAGES);
    assert!(m.completed);
    assert_eq!(m.stage("ablate").unwrap().status, StageStatus::Skipped);
    assert!(m.stages.iter().all(|s| s.status != StageStatus::Failed));
    let metrics = m.final_metrics.as_ref().unwrap();
    assert!(metrics.ci_low <= metrics.auroc && metrics.auroc <= metrics.ci_high);
    for f in ["cohort.csv", "ground_truth.json", "model.json", "metrics.csv", "shap_values.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
}

#[test]
fn resume_reuses_intact_stages_and_redoes_tampered_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), ModelKind::Lr);
    let first = run(&cfg, RunOptions::default()).unwrap();
    let again = run(&cfg, RunOptions { resume: true }).unwrap();
    assert!(again.stages.iter().all(|s| s.resumed));
    assert_eq!(again.final_metrics, first.final_metrics);

    // a modified artifact invalidates its stage and everything after it
    std::fs::write(dir.path().join("model.json"), b"{}").unwrap();
    let third = run(&cfg, RunOptions { resume: true }).unwrap();
    let resumed: Vec<bool> = third.stages.iter().map(|s| s.resumed).collect();
    assert_eq!(resumed, [true, true, true, false, false, false, false]);
    assert_eq!(third.final_metrics, first.final_metrics);

    // a different config never resumes
    let mut other = cfg.clone();
    other.evaluation.bootstrap = 60;
    let fourth = run(&other, RunOptions { resume: true }).unwrap();
    assert!(fourth.stages.iter().all(|s| !s.resumed));
}

#[test]
fn failed_stage_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), ModelKind::Lr);
    // SMOTE needs more minority neighbours than this tiny cohort has
    cfg.input.synth_rows = Some(40);
    cfg.smote.k_neighbors = 50;
    let err = run(&cfg, RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let m = RunManifest::load(dir.path()).unwrap();
    let last = m.stages.last().unwrap();
    assert_eq!(last.name, "resample");
    assert_eq!(last.status, StageStatus::Failed);
    assert!(last.error.as_deref().unwrap().contains("SMOTE"));
    assert!(!m.completed);
}

#[test]
fn two_runs_compare_side_by_side() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    run(&small_config(&a, ModelKind::Lr), RunOptions::default()).unwrap();
    let mut cfg = small_config(&b, ModelKind::Gbt);
    cfg.selection.method = Selector::Lasso;
    run(&cfg, RunOptions::default()).unwrap();
    let table = compare_paths(&[a.clone(), b.join("manifest.json")]).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["XGB-LR", "LASSO-XGB"]);
    assert_eq!(table.best.len(), 6);
    assert!(table.best.iter().all(|b| !b.is_empty()));
    let text = table.render();
    assert!(text.contains('*'));
    assert_eq!(table.to_csv().lines().count(), 3);
    assert!(compare_paths(&[a]).is_err());
}

#[test]
fn json_reports_are_byte_identical_across_runs() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let ma = run(&small_config(&a, ModelKind::Rf), RunOptions::default()).unwrap();
    run(&small_config(&b, ModelKind::Rf), RunOptions::default()).unwrap();
    let paths = report_paths(&ma);
    assert!(paths.len() >= 8);
    for p in paths {
        let twin = b.join(p.strip_prefix(&a).unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&twin).unwrap(), "{}", p.display());
    }
}
