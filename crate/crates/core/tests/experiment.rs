use std::fs;

use async_local_sgd::experiment::{
    self, sweep, sweep_cell_config, validate_equivalences, EquivalenceOptions, SweepAxis, STRATEGY_PRESETS,
    SUMMARY_HEADER,
};
use async_local_sgd::{ExperimentConfig, MetricsLog, StrategyKind, CSV_HEADER};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.task.num_points = 512;
    cfg.task.eval_points = 64;
    cfg.hidden = vec![8];
    cfg.local_steps = 10;
    cfg.t_max = 200;
    cfg
}

fn values(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn run_writes_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let out = experiment::run(&small(), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let parsed = MetricsLog::parse_csv(&text).unwrap();
    assert_eq!(parsed, out.log.rows);
    for w in parsed.windows(2) {
        assert!(w[1].server_update > w[0].server_update);
    }
}

#[test]
fn run_reports_unwritable_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("run.csv");
    let err = experiment::run(&small(), &path).unwrap_err().to_string();
    assert!(err.contains("missing"), "{err}");
}

#[test]
fn worker_sweep_writes_one_csv_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let summary = sweep(&small(), SweepAxis::Workers, &values(&["4", "8", "16"]), dir.path()).unwrap();
    assert!(summary.failed().is_empty());
    for k in ["4", "8", "16"] {
        assert!(dir.path().join(format!("workers_{k}.csv")).exists());
    }
    let text = fs::read_to_string(&summary.summary_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("workers,4,ok,"));
}

#[test]
fn c_sweep_cells_differ_only_in_c() {
    let mut base = small();
    base.outer.strategy = StrategyKind::DelayedNesterov;
    let a = sweep_cell_config(&base, SweepAxis::CValue, "0").unwrap();
    let mut b = sweep_cell_config(&base, SweepAxis::CValue, "0.1").unwrap();
    assert_eq!(b.outer.c, 0.1);
    b.outer.c = 0.0;
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let summary = sweep(&base, SweepAxis::CValue, &values(&["0", "0.1"]), dir.path()).unwrap();
    let finals: Vec<f64> = summary.cells.iter().map(|c| c.outcome.clone().unwrap().eval_loss).collect();
    assert_ne!(finals[0], finals[1]);
}

#[test]
fn failing_cells_do_not_stop_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let summary = sweep(&small(), SweepAxis::Heterogeneity, &values(&["no", "extreme", "very"]), dir.path()).unwrap();
    let failed: Vec<&str> = summary.failed().iter().map(|c| c.value.as_str()).collect();
    assert_eq!(failed, vec!["extreme"]);
    let text = fs::read_to_string(&summary.summary_path).unwrap();
    assert!(text.contains("heterogeneity,extreme,failed"));
    assert!(text.contains("heterogeneity,very,ok"));
    assert!(dir.path().join("heterogeneity_very.csv").exists());
}

#[test]
fn every_strategy_preset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let summary = sweep(&small(), SweepAxis::Strategy, &values(STRATEGY_PRESETS), dir.path()).unwrap();
    assert!(summary.failed().is_empty());
    assert_eq!(summary.cells.len(), STRATEGY_PRESETS.len());
}

#[test]
fn equivalence_suite_passes_and_detects_perturbation() {
    let clean = validate_equivalences(EquivalenceOptions::default()).unwrap();
    assert!(clean.all_passed(), "{clean:?}");
    let broken = validate_equivalences(EquivalenceOptions {
        beta_perturbation: 1e-3,
    })
    .unwrap();
    let sync = broken.checks.iter().find(|c| c.name == "sync via async").unwrap();
    assert!(!sync.passed);
    assert!(sync.max_deviation > 1e-9);
}
