use std::collections::BTreeMap;

use async_local_sgd::config::SpeedProfile;
use async_local_sgd::optim::OuterKind;
use async_local_sgd::sim::{dylu_steps, run_async, run_async_observed, run_sync, JobRecord, RunOutput};
use async_local_sgd::{ExperimentConfig, Mode, StrategyKind};

/// Small task so each run takes milliseconds.
fn small(speeds: &[f64]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.task.num_points = 512;
    cfg.task.eval_points = 64;
    cfg.hidden = vec![8];
    cfg.workers = speeds.len();
    cfg.profile = SpeedProfile::Explicit(speeds.to_vec());
    cfg.local_steps = 10;
    cfg.t_max = 400;
    cfg.eval_every = 5;
    cfg
}

fn first_cohort(out: &RunOutput) -> Vec<&JobRecord> {
    let mut jobs: Vec<&JobRecord> = out.jobs.iter().filter(|j| j.start_time == 0.0).collect();
    jobs.sort_by_key(|j| j.worker_id);
    jobs
}

#[test]
fn dylu_step_examples() {
    assert_eq!(dylu_steps(1.0, 1.0, 50), 50);
    assert_eq!(dylu_steps(1.0, 4.0, 50), 12);
    assert_eq!(dylu_steps(2.0, 3.0, 50), 33);
    assert_eq!(dylu_steps(0.001, 1.0, 50), 1);
}

#[test]
fn dylu_assignment_aligns_completion_times() {
    let mut cfg = small(&[4.0, 2.0, 1.0, 0.5]);
    cfg.local_steps = 50;
    cfg.dylu = true;
    cfg.t_max = 93;
    let out = run_async(&cfg).unwrap();
    let first = first_cohort(&out);
    let steps: Vec<u64> = first.iter().map(|j| j.steps).collect();
    let done: Vec<f64> = first.iter().map(|j| j.completed_time).collect();
    assert_eq!(steps, vec![50, 25, 12, 6]);
    assert_eq!(done, vec![12.5, 12.5, 12.0, 12.0]);
}

#[test]
fn fixed_steps_without_dylu() {
    let mut cfg = small(&[4.0, 2.0, 1.0, 0.5]);
    cfg.local_steps = 50;
    cfg.t_max = 200;
    let out = run_async(&cfg).unwrap();
    let first = first_cohort(&out);
    assert!(first.iter().all(|j| j.steps == 50));
    let done: Vec<f64> = first.iter().map(|j| j.completed_time).collect();
    assert_eq!(done, vec![12.5, 25.0, 50.0, 100.0]);
}

#[test]
fn fast_worker_runs_eight_jobs_per_slow_job() {
    let mut cfg = small(&[4.0, 0.5]);
    cfg.local_steps = 50;
    cfg.t_max = 450;
    let out = run_async(&cfg).unwrap();
    let slow_done = out
        .jobs
        .iter()
        .find(|j| j.worker_id == 1)
        .map(|j| j.completed_time)
        .unwrap();
    assert_eq!(slow_done, 100.0);
    let fast = out
        .jobs
        .iter()
        .filter(|j| j.worker_id == 0 && j.completed_time <= slow_done)
        .count();
    assert_eq!(fast, 8);
}

#[test]
fn single_worker_is_serial_local_sgd() {
    let mut cfg = small(&[1.0]);
    cfg.t_max = 50;
    let out = run_async(&cfg).unwrap();
    assert_eq!(out.server_version, 5);
    assert_eq!(out.local_updates, 50);
    for (i, j) in out.jobs.iter().enumerate() {
        assert_eq!(j.base_version, i as u64);
        assert_eq!(j.synced_version, Some(i as u64 + 1));
        assert_eq!(j.steps, 10);
    }
}

#[test]
fn homogeneous_workers_sync_as_one_cohort() {
    let cfg = small(&[1.0; 4]);
    let out = run_async(&cfg).unwrap();
    let mut cohorts: BTreeMap<u64, Vec<&JobRecord>> = BTreeMap::new();
    for j in &out.jobs {
        cohorts.entry(j.start_time.to_bits()).or_default().push(j);
    }
    for jobs in cohorts.values() {
        assert_eq!(jobs.len(), 4);
        assert!(jobs.iter().all(|j| j.base_version == jobs[0].base_version));
    }
}

#[test]
fn cohorts_restart_from_one_server_version() {
    for dylu in [false, true] {
        let mut cfg = small(&[1.0, 0.5, 0.25, 0.125]);
        cfg.dylu = dylu;
        cfg.t_max = 600;
        let out = run_async(&cfg).unwrap();
        let mut cohorts: BTreeMap<u64, Vec<&JobRecord>> = BTreeMap::new();
        for j in &out.jobs {
            cohorts.entry(j.start_time.to_bits()).or_default().push(j);
        }
        for jobs in cohorts.values() {
            assert!(jobs.iter().all(|j| j.base_version == jobs[0].base_version));
        }
    }
}

#[test]
fn work_is_conserved() {
    let strategies = [
        StrategyKind::Vanilla,
        StrategyKind::Poly,
        StrategyKind::PolyThres,
        StrategyKind::DelayComp,
        StrategyKind::AsyncBuffer,
        StrategyKind::DelayedNesterov,
    ];
    for (i, strategy) in strategies.into_iter().enumerate() {
        let mut cfg = small(&[1.0, 0.7, 0.3]);
        cfg.outer.strategy = strategy;
        cfg.outer.threshold = Some(1);
        cfg.dylu = i % 2 == 0;
        cfg.t_max = 137;
        let out = run_async(&cfg).unwrap();
        let synced: u64 = out.jobs.iter().filter(|j| j.synced_version.is_some()).map(|j| j.steps).sum();
        let largest = out.jobs.iter().map(|j| j.steps).max().unwrap();
        assert_eq!(synced, out.local_updates, "{strategy:?}");
        assert!(out.local_updates >= cfg.t_max);
        assert!(cfg.t_max + largest > out.local_updates);
        assert_eq!(
            out.server_version,
            out.jobs.iter().filter(|j| j.synced_version.is_some()).count() as u64
        );
    }
}

#[test]
fn events_are_time_ordered_with_id_tie_break() {
    let mut cfg = small(&[1.0, 1.0, 0.5, 0.5, 0.25]);
    cfg.t_max = 500;
    let mut events = Vec::new();
    run_async_observed(&cfg, &mut |e| events.push((e.sim_time, e.worker_id.unwrap(), e.server_version))).unwrap();
    for w in events.windows(2) {
        let (t0, id0, v0) = w[0];
        let (t1, id1, v1) = w[1];
        assert!(t1 >= t0);
        if t1 == t0 {
            assert!(id1 > id0);
        }
        assert_eq!(v1, v0 + 1);
    }
}

#[test]
fn staleness_counts_intervening_updates() {
    let mut cfg = small(&[1.0, 0.5, 0.25]);
    cfg.t_max = 300;
    let out = run_async(&cfg).unwrap();
    let mut events = Vec::new();
    run_async_observed(&cfg, &mut |e| events.push((e.worker_id.unwrap(), e.server_version, e.staleness))).unwrap();
    for (worker, version, staleness) in events {
        let job = out
            .jobs
            .iter()
            .find(|j| j.worker_id == worker && j.synced_version == Some(version))
            .unwrap();
        assert_eq!(staleness, version - 1 - job.base_version);
    }
}

#[test]
fn discarded_updates_still_advance_the_version() {
    let mut cfg = small(&[1.0, 0.2]);
    cfg.outer.strategy = StrategyKind::PolyThres;
    cfg.outer.threshold = Some(0);
    let mut discarded = 0;
    let mut last = 0;
    run_async_observed(&cfg, &mut |e| {
        assert_eq!(e.server_version, last + 1);
        last = e.server_version;
        discarded += usize::from(!e.applied);
    })
    .unwrap();
    assert!(discarded > 0);
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = small(&[1.0, 0.5, 0.25, 0.125]);
    cfg.outer.strategy = StrategyKind::DelayedNesterov;
    cfg.dylu = true;
    let a = run_async(&cfg).unwrap();
    let b = run_async(&cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.jobs, b.jobs);
    assert_eq!(a.final_params, b.final_params);
    assert_eq!(a.log.to_csv(), b.log.to_csv());
}

#[test]
fn max_sim_time_stops_before_late_completions() {
    let mut cfg = small(&[1.0, 0.5]);
    cfg.t_max = 10_000;
    cfg.max_sim_time = Some(55.0);
    let out = run_async(&cfg).unwrap();
    assert!(out.sim_time <= 55.0);
    assert!(out.local_updates < cfg.t_max);
    assert!(out.jobs.iter().filter(|j| j.synced_version.is_some()).all(|j| j.completed_time <= 55.0));
}

#[test]
fn sync_rounds_are_gated_by_the_slowest_worker() {
    let mut cfg = small(&[1.0, 0.5, 0.25]);
    cfg.mode = Mode::Sync;
    cfg.t_max = 95;
    let out = run_sync(&cfg).unwrap();
    // ceil(95 / 30) rounds of 10 / 0.25 seconds
    assert_eq!(out.server_version, 4);
    assert_eq!(out.local_updates, 120);
    assert_eq!(out.sim_time, 160.0);
}

#[test]
fn single_worker_sync_with_unit_sgd_telescopes() {
    let mut rounds = small(&[1.0]);
    rounds.mode = Mode::Sync;
    rounds.outer.optimizer = OuterKind::Sgd;
    rounds.outer.lr = 1.0;
    rounds.t_max = 100;
    let mut whole = rounds.clone();
    whole.local_steps = 100;
    let a = run_sync(&rounds).unwrap();
    let b = run_sync(&whole).unwrap();
    assert_eq!(a.server_version, 10);
    assert_eq!(b.server_version, 1);
    assert!(a.final_params.max_abs_diff(&b.final_params).unwrap() <= 1e-12);
}

#[test]
fn zero_budget_only_evaluates_the_initial_model() {
    for mode in [Mode::Async, Mode::Sync] {
        let mut cfg = small(&[1.0, 0.5]);
        cfg.mode = mode;
        cfg.t_max = 0;
        let out = async_local_sgd::sim::run_experiment(&cfg).unwrap();
        assert_eq!(out.log.rows.len(), 1);
        assert_eq!(out.log.rows[0].server_update, 0);
        assert!(out.jobs.is_empty());
    }
}
