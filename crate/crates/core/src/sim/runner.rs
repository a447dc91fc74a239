//! Event loops for asynchronous and synchronous Local-SGD.
//!
//! Both loops share data generation, initialization and the
//! [`LocalTrainer`], so with the same seeds they consume the same random
//! stream in the same order whenever they assign the same jobs.

use crate::config::{ExperimentConfig, Mode};
use crate::data::{generate_dataset, split_shards};
use crate::error::Result;
use crate::metrics::{MetricsLog, MetricsRow};
use crate::model::{Batch, Mlp};
use crate::optim::{OuterOptState, PseudoGradient};
use crate::params::ParamVector;
use crate::sim::profile::{dylu_steps, DeviceProfile};
use crate::sim::server::Server;
use crate::sim::trainer::LocalTrainer;
use crate::sim::worker::{get_completed_worker, Job, WorkerHandle, WorkerStatus};

/// Seed offset separating the shard split from dataset generation.
const SPLIT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Emitted after every server update.
#[derive(Debug)]
pub struct SyncEvent<'a> {
    pub server_version: u64,
    pub local_updates: u64,
    pub sim_time: f64,
    pub params: &'a ParamVector,
    /// Worker whose update was applied; `None` for a synchronous round.
    pub worker_id: Option<usize>,
    pub staleness: u64,
    pub applied: bool,
}

/// One assigned job, for post-hoc inspection of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub worker_id: usize,
    pub shard_id: usize,
    pub steps: u64,
    pub lr_start: u64,
    pub base_version: u64,
    pub start_time: f64,
    pub completed_time: f64,
    /// Server version right after this job's update was applied.
    pub synced_version: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub jobs: Vec<JobRecord>,
    pub final_params: ParamVector,
    pub server_version: u64,
    pub local_updates: u64,
    pub sim_time: f64,
}

struct Setup {
    mlp: Mlp,
    eval: Batch,
    trainer: LocalTrainer,
    params: ParamVector,
    profile: DeviceProfile,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let mlp = Mlp::new(cfg.mlp_config())?;
    let data = generate_dataset(&cfg.mixture_spec())?;
    let shards = split_shards(&data, cfg.workers, cfg.task.shard_mode, cfg.seeds.data ^ SPLIT_SEED_SALT)?;
    let eval = generate_dataset(&cfg.eval_mixture_spec())?.points;
    let params = mlp.init_params(cfg.seeds.init);
    let trainer = LocalTrainer::new(
        mlp.clone(),
        shards,
        cfg.workers,
        cfg.inner.optimizer,
        cfg.lr_schedule(),
        cfg.inner.batch_size,
        cfg.seeds.run,
    );
    Ok(Setup {
        mlp,
        eval,
        trainer,
        params,
        profile: cfg.device_profile(),
    })
}

/// Evaluates every `every` server versions, plus the first and last.
struct Recorder<'a> {
    mlp: &'a Mlp,
    eval: &'a Batch,
    every: u64,
    log: MetricsLog,
}

impl Recorder<'_> {
    fn record(&mut self, version: u64, local: u64, time: f64, params: &ParamVector) -> Result<()> {
        let m = self.mlp.eval_metrics(params, self.eval)?;
        self.log.rows.push(MetricsRow {
            server_update: version,
            local_updates: local,
            sim_time_s: time,
            eval_loss: m.loss,
            eval_ppl: m.ppl,
            eval_accuracy: m.accuracy,
        });
        Ok(())
    }

    fn after_update(&mut self, version: u64, local: u64, time: f64, params: &ParamVector) -> Result<()> {
        if version % self.every == 0 {
            self.record(version, local, time, params)?;
        }
        Ok(())
    }

    fn finish(mut self, version: u64, local: u64, time: f64, params: &ParamVector) -> Result<MetricsLog> {
        if self.log.last().map(|r| r.server_update) != Some(version) {
            self.record(version, local, time, params)?;
        }
        Ok(self.log)
    }
}

/// Runs whichever mode the config selects.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.mode {
        Mode::Async => run_async(cfg),
        Mode::Sync => run_sync(cfg),
    }
}

pub fn run_async(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_async_observed(cfg, &mut |_| {})
}

pub fn run_sync(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_sync_observed(cfg, &mut |_| {})
}

struct AsyncState<'a> {
    cfg: &'a ExperimentConfig,
    fastest: f64,
    trainer: LocalTrainer,
    server: Server,
    workers: Vec<WorkerHandle>,
    jobs: Vec<JobRecord>,
    /// Index into `jobs` of each worker's running job.
    job_index: Vec<usize>,
}

impl AsyncState<'_> {
    /// Starts a job for each listed worker from the current server model.
    ///
    /// Shard, step count and schedule position are decided here, and the
    /// local training itself runs immediately; only its completion time is
    /// simulated.
    fn assign_jobs(&mut self, ids: &[usize]) -> Result<()> {
        let now = self.server.clock.now;
        let version = self.server.clock.server_version;
        for &id in ids {
            let speed = self.workers[id].speed;
            let shard = self.trainer.sample_shard()?;
            let steps = if self.cfg.dylu {
                dylu_steps(speed, self.fastest, self.cfg.local_steps)
            } else {
                self.cfg.local_steps
            };
            let lr_start = self.trainer.shard_step(shard);
            let trained = self.trainer.train(id, shard, steps, &self.server.params)?;
            let delta = self.server.params.sub(&trained)?;
            let job = Job {
                shard_id: shard,
                steps,
                lr_start,
                base_version: version,
                start_time: now,
                completed_time: now + steps as f64 / speed,
            };
            self.job_index[id] = self.jobs.len();
            self.jobs.push(JobRecord {
                worker_id: id,
                shard_id: shard,
                steps,
                lr_start,
                base_version: version,
                start_time: job.start_time,
                completed_time: job.completed_time,
                synced_version: None,
            });
            let w = &mut self.workers[id];
            w.update = Some(PseudoGradient::new(delta, id, version));
            w.base_params = Some(self.server.params.clone());
            w.job = Some(job);
            w.status = WorkerStatus::Training;
        }
        Ok(())
    }
}

/// Asynchronous Local-SGD with a grace window.
///
/// All workers start at time zero. The loop repeatedly takes the earliest
/// unsynced job; if it finishes within `grace` of the window's first
/// completion it is synced into the server model, otherwise the window
/// closes and every synced worker receives a new job that starts at the
/// latest synced completion time. Runs until `t_max` local updates have
/// been synced, or until the next completion lies past `max_sim_time`.
pub fn run_async_observed(cfg: &ExperimentConfig, observer: &mut dyn FnMut(&SyncEvent)) -> Result<RunOutput> {
    let Setup {
        mlp,
        eval,
        trainer,
        params,
        profile,
    } = setup(cfg)?;
    let grace = cfg.grace_period();
    let mut recorder = Recorder {
        mlp: &mlp,
        eval: &eval,
        every: cfg.eval_every,
        log: MetricsLog::new(cfg.strategy_tag()),
    };
    recorder.record(0, 0, 0.0, &params)?;

    let workers: Vec<WorkerHandle> = profile
        .speeds
        .iter()
        .enumerate()
        .map(|(id, &v)| WorkerHandle::new(id, v))
        .collect();
    let mut state = AsyncState {
        cfg,
        fastest: profile.fastest(),
        trainer,
        server: Server::from_config(params, cfg)?,
        job_index: vec![0; workers.len()],
        workers,
        jobs: Vec::new(),
    };

    let all: Vec<usize> = (0..cfg.workers).collect();
    if cfg.t_max > 0 {
        state.assign_jobs(&all)?;
    }
    let mut window: Option<f64> = None;
    let mut completed: Vec<usize> = Vec::new();

    while state.server.clock.total_local_updates < cfg.t_max {
        match get_completed_worker(&state.workers, grace, window) {
            Some(id) => {
                let w = &mut state.workers[id];
                let job = w.job.clone().expect("training worker has a job");
                if cfg.max_sim_time.is_some_and(|limit| job.completed_time > limit) {
                    break;
                }
                let update = w.update.take().expect("training worker has an update");
                let base = w.base_params.take().expect("training worker has a base model");
                w.status = WorkerStatus::Completed;

                window = Some(window.map_or(job.completed_time, |s| s.min(job.completed_time)));
                state.server.clock.advance_to(job.completed_time);
                let outcome = state.server.apply_sync(update, &base)?;
                state.server.clock.total_local_updates += job.steps;
                completed.push(id);

                let clock = state.server.clock;
                state.jobs[state.job_index[id]].synced_version = Some(clock.server_version);
                observer(&SyncEvent {
                    server_version: clock.server_version,
                    local_updates: clock.total_local_updates,
                    sim_time: clock.now,
                    params: &state.server.params,
                    worker_id: Some(id),
                    staleness: outcome.staleness,
                    applied: outcome.applied,
                });
                recorder.after_update(
                    clock.server_version,
                    clock.total_local_updates,
                    clock.now,
                    &state.server.params,
                )?;
            }
            None => {
                window = None;
                let ids = std::mem::take(&mut completed);
                state.assign_jobs(&ids)?;
            }
        }
    }

    let clock = state.server.clock;
    let log = recorder.finish(
        clock.server_version,
        clock.total_local_updates,
        clock.now,
        &state.server.params,
    )?;
    Ok(RunOutput {
        log,
        jobs: state.jobs,
        final_params: state.server.params,
        server_version: clock.server_version,
        local_updates: clock.total_local_updates,
        sim_time: clock.now,
    })
}

/// Synchronous rounds: every worker runs `H` steps from the same model, the
/// server averages the pseudo-gradients and takes one outer step.
///
/// A round lasts `H / slowest speed` simulated seconds. Runs
/// `ceil(t_max / (k H))` rounds, fewer if `max_sim_time` cuts it short.
pub fn run_sync_observed(cfg: &ExperimentConfig, observer: &mut dyn FnMut(&SyncEvent)) -> Result<RunOutput> {
    let Setup {
        mlp,
        eval,
        mut trainer,
        mut params,
        profile,
    } = setup(cfg)?;
    let mut recorder = Recorder {
        mlp: &mlp,
        eval: &eval,
        every: cfg.eval_every,
        log: MetricsLog::new(cfg.strategy_tag()),
    };
    recorder.record(0, 0, 0.0, &params)?;

    let k = cfg.workers as u64;
    let h = cfg.local_steps;
    let rounds = cfg.t_max.div_ceil(k * h);
    let round_time = h as f64 / profile.slowest();
    let mut outer = OuterOptState::new(cfg.outer.optimizer, &params, cfg.outer.beta);
    let mut jobs = Vec::new();
    let mut version = 0u64;
    let mut local = 0u64;
    let mut now = 0.0f64;

    for _ in 0..rounds {
        if cfg.max_sim_time.is_some_and(|limit| now + round_time > limit) {
            break;
        }
        let mut deltas = Vec::with_capacity(cfg.workers);
        for (id, &speed) in profile.speeds.iter().enumerate() {
            let shard = trainer.sample_shard()?;
            let lr_start = trainer.shard_step(shard);
            let trained = trainer.train(id, shard, h, &params)?;
            deltas.push(params.sub(&trained)?);
            jobs.push(JobRecord {
                worker_id: id,
                shard_id: shard,
                steps: h,
                lr_start,
                base_version: version,
                start_time: now,
                completed_time: now + h as f64 / speed,
                synced_version: Some(version + 1),
            });
        }
        let refs: Vec<&ParamVector> = deltas.iter().collect();
        let mean = ParamVector::mean(&refs)?;
        outer.step(&mut params, &mean, cfg.outer.lr)?;
        version += 1;
        local += k * h;
        now += round_time;
        observer(&SyncEvent {
            server_version: version,
            local_updates: local,
            sim_time: now,
            params: &params,
            worker_id: None,
            staleness: 0,
            applied: true,
        });
        recorder.after_update(version, local, now, &params)?;
    }

    let log = recorder.finish(version, local, now, &params)?;
    Ok(RunOutput {
        log,
        jobs,
        final_params: params,
        server_version: version,
        local_updates: local,
        sim_time: now,
    })
}
