//! Single runs, parameter sweeps and the built-in equivalence checks.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Mode, SpeedProfile, StrategyKind};
use crate::error::{Error, Result};
use crate::metrics::{format_row, MetricsRow};
use crate::model::{max_relative_error, Activation, Batch, Mlp, MlpConfig};
use crate::optim::{outer_nesterov, sequential_nesterov_closed_form, DelayedNesterovState, OuterKind};
use crate::params::ParamVector;
use crate::sim::{run_async_observed, run_experiment, run_sync_observed, Heterogeneity, RunOutput};

/// Runs the configured experiment and writes its metrics CSV to `out_path`.
pub fn run(cfg: &ExperimentConfig, out_path: &Path) -> Result<RunOutput> {
    let output = run_experiment(cfg)?;
    write_log(&output, out_path)?;
    Ok(output)
}

fn write_log(output: &RunOutput, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    output
        .log
        .write_csv(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Heterogeneity,
    Workers,
    CValue,
    Strategy,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Heterogeneity => "heterogeneity",
            SweepAxis::Workers => "workers",
            SweepAxis::CValue => "c_value",
            SweepAxis::Strategy => "strategy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "heterogeneity" => SweepAxis::Heterogeneity,
            "workers" => SweepAxis::Workers,
            "c_value" => SweepAxis::CValue,
            "strategy" => SweepAxis::Strategy,
            _ => return None,
        })
    }
}

/// Named strategy presets accepted on the `strategy` axis.
pub const STRATEGY_PRESETS: &[&str] = &[
    "diloco",
    "vanilla_sgd",
    "vanilla_nesterov",
    "poly",
    "polythres",
    "delay_comp",
    "async_buffer",
    "dn",
    "dn_dylu",
];

/// Applies a named strategy preset on top of `cfg`.
///
/// `diloco` is the synchronous Nesterov reference; every other preset runs
/// asynchronously with Nesterov as the outer optimizer (SGD for
/// `vanilla_sgd`). Only `dn_dylu` enables dynamic local updates.
pub fn apply_strategy_preset(cfg: &mut ExperimentConfig, preset: &str) -> Result<()> {
    let (mode, strategy, optimizer, dylu) = match preset {
        "diloco" => (Mode::Sync, StrategyKind::Vanilla, OuterKind::Nesterov, false),
        "vanilla_sgd" => (Mode::Async, StrategyKind::Vanilla, OuterKind::Sgd, false),
        "vanilla_nesterov" => (Mode::Async, StrategyKind::Vanilla, OuterKind::Nesterov, false),
        "poly" => (Mode::Async, StrategyKind::Poly, OuterKind::Nesterov, false),
        "polythres" => (Mode::Async, StrategyKind::PolyThres, OuterKind::Nesterov, false),
        "delay_comp" => (Mode::Async, StrategyKind::DelayComp, OuterKind::Nesterov, false),
        "async_buffer" => (Mode::Async, StrategyKind::AsyncBuffer, OuterKind::Nesterov, false),
        "dn" => (Mode::Async, StrategyKind::DelayedNesterov, OuterKind::Nesterov, false),
        "dn_dylu" => (Mode::Async, StrategyKind::DelayedNesterov, OuterKind::Nesterov, true),
        other => {
            return Err(Error::Argument(format!(
                "unknown strategy preset `{other}`; expected one of {}",
                STRATEGY_PRESETS.join(", ")
            )))
        }
    };
    cfg.mode = mode;
    cfg.outer.strategy = strategy;
    cfg.outer.optimizer = optimizer;
    cfg.dylu = dylu;
    Ok(())
}

/// The config for one sweep cell.
pub fn sweep_cell_config(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Heterogeneity => {
            let level = Heterogeneity::parse(value).ok_or_else(|| {
                Error::Argument(format!("unknown heterogeneity level `{value}`; expected no, slight, moderate or very"))
            })?;
            cfg.profile = SpeedProfile::Preset(level);
        }
        SweepAxis::Workers => {
            cfg.workers = value
                .parse()
                .map_err(|_| Error::Argument(format!("worker count `{value}` is not an integer")))?;
        }
        SweepAxis::CValue => {
            cfg.outer.c = value
                .parse()
                .map_err(|_| Error::Argument(format!("c value `{value}` is not a number")))?;
        }
        SweepAxis::Strategy => apply_strategy_preset(&mut cfg, value)?,
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: String,
    pub csv_path: PathBuf,
    /// Final metrics row, or the error message of a failed cell.
    pub outcome: std::result::Result<MetricsRow, String>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    pub summary_path: PathBuf,
}

impl SweepSummary {
    pub fn failed(&self) -> Vec<&SweepCell> {
        self.cells.iter().filter(|c| c.outcome.is_err()).collect()
    }
}

pub const SUMMARY_HEADER: &str =
    "axis,value,status,server_update,local_updates,sim_time_s,eval_loss,eval_ppl,eval_acc";

fn file_stem(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Runs one experiment per value, in parallel, then writes `summary.csv`.
///
/// Each cell writes `<axis>_<value>.csv` into `out_dir`. A failing cell
/// does not stop the others; it appears in the summary with status
/// `failed` and empty metrics.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String], out_dir: &Path) -> Result<SweepSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cells: Vec<SweepCell> = values
        .par_iter()
        .map(|value| {
            let csv_path = out_dir.join(format!("{}_{}.csv", axis.name(), file_stem(value)));
            let outcome = sweep_cell_config(base, axis, value)
                .and_then(|cfg| run(&cfg, &csv_path))
                .map_err(|e| e.to_string())
                .and_then(|out| out.log.last().copied().ok_or_else(|| "run produced no rows".to_string()));
            SweepCell {
                value: value.clone(),
                csv_path,
                outcome,
            }
        })
        .collect();

    let summary_path = out_dir.join("summary.csv");
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for cell in &cells {
        match &cell.outcome {
            Ok(row) => text.push_str(&format!("{},{},ok,{}\n", axis.name(), cell.value, format_row(row))),
            Err(_) => text.push_str(&format!("{},{},failed,,,,,,\n", axis.name(), cell.value)),
        }
    }
    fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    Ok(SweepSummary {
        axis,
        cells,
        summary_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &'static str, max_deviation: f64, tolerance: f64) -> Self {
        CheckResult {
            name,
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub checks: Vec<CheckResult>,
}

impl EquivalenceReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EquivalenceOptions {
    /// Added to the asynchronous run's momentum decay in the sync-via-async
    /// check, to confirm the check can fail.
    pub beta_perturbation: f64,
}

/// Largest relative error between backprop and central differences over
/// `draws` random parameter/batch pairs with entries in `[-10, 10]`.
pub fn gradient_check(config: &MlpConfig, draws: usize, batch_size: usize, seed: u64) -> Result<f64> {
    let mlp = Mlp::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let values = (0..mlp.num_params()).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let params = ParamVector::from_values(mlp.shapes(), values)?;
        let inputs = (0..batch_size * config.input_dim)
            .map(|_| rng.random_range(-10.0..=10.0))
            .collect();
        let labels = (0..batch_size).map(|_| rng.random_range(0..config.num_classes)).collect();
        let batch = Batch::new(config.input_dim, inputs, labels)?;
        let (_, grad) = mlp.backward(&params, &batch)?;
        let fd = mlp.finite_diff_grad(&params, &batch, 1e-5)?;
        worst = worst.max(max_relative_error(grad.values(), fd.values()));
    }
    Ok(worst)
}

/// Largest parameter gap between delayed Nesterov with `N = 1` and plain
/// Nesterov over `steps` random pseudo-gradients.
pub fn dn_single_buffer_deviation(c: f64, steps: usize, seed: u64) -> Result<f64> {
    let dim = 16;
    let beta = 0.9;
    let lr = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = ParamVector::flat((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut dn_params = start.clone();
    let mut dn = DelayedNesterovState::new(&start, 1, c, beta)?;
    let mut nes_params = start.clone();
    let mut m = start.zeros_like();
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let g = ParamVector::flat((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        dn.step(&mut dn_params, &g, lr)?;
        outer_nesterov(&mut m, beta, &mut nes_params, &g, lr)?;
        worst = worst.max(dn_params.max_abs_diff(&nes_params)?);
    }
    Ok(worst)
}

/// Gap between four sequential Nesterov steps on one pseudo-gradient and
/// the closed form, over both momentum and displacement.
pub fn closed_form_deviation(beta: f64, seed: u64) -> Result<f64> {
    let dim = 8;
    let lr = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m0: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (m4, disp) = sequential_nesterov_closed_form(&m0, &g, beta, 4)?;

    let mut m = ParamVector::flat(m0);
    let mut params = ParamVector::flat(vec![0.0; dim]);
    let grad = ParamVector::flat(g);
    for _ in 0..4 {
        outer_nesterov(&mut m, beta, &mut params, &grad, lr)?;
    }
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        worst = worst.max((m.values()[i] - m4[i]).abs());
        worst = worst.max((-params.values()[i] / lr - disp[i]).abs());
    }
    Ok(worst)
}

/// Paired configs for the sync-via-async check: homogeneous workers,
/// delayed Nesterov with `N = k` and `c = 0` versus synchronous Nesterov.
pub fn sync_via_async_configs(base: &ExperimentConfig, rounds: u64) -> (ExperimentConfig, ExperimentConfig) {
    let mut async_cfg = base.clone();
    async_cfg.mode = Mode::Async;
    async_cfg.profile = SpeedProfile::Preset(Heterogeneity::No);
    async_cfg.outer.strategy = StrategyKind::DelayedNesterov;
    async_cfg.outer.optimizer = OuterKind::Nesterov;
    async_cfg.outer.buffer_size = Some(async_cfg.workers);
    async_cfg.outer.c = 0.0;
    async_cfg.t_max = rounds * async_cfg.workers as u64 * async_cfg.local_steps;
    async_cfg.max_sim_time = None;
    async_cfg.eval_every = u64::MAX;

    let mut sync_cfg = async_cfg.clone();
    sync_cfg.mode = Mode::Sync;
    sync_cfg.outer.strategy = StrategyKind::Vanilla;
    (async_cfg, sync_cfg)
}

/// Largest `|θ_async - θ_sync|` over all rounds, comparing the async model
/// after every `k`-th sync with the sync model after each round.
pub fn sync_via_async_deviation(base: &ExperimentConfig, rounds: u64, beta_perturbation: f64) -> Result<f64> {
    let (mut async_cfg, sync_cfg) = sync_via_async_configs(base, rounds);
    async_cfg.outer.beta += beta_perturbation;
    let k = async_cfg.workers as u64;

    let mut sync_traj = Vec::new();
    run_sync_observed(&sync_cfg, &mut |e| sync_traj.push(e.params.clone()))?;
    let mut async_traj = Vec::new();
    run_async_observed(&async_cfg, &mut |e| {
        if e.server_version % k == 0 {
            async_traj.push(e.params.clone());
        }
    })?;
    if sync_traj.len() != async_traj.len() {
        return Ok(f64::INFINITY);
    }
    let mut worst: f64 = 0.0;
    for (a, s) in async_traj.iter().zip(&sync_traj) {
        worst = worst.max(a.max_abs_diff(s)?);
    }
    Ok(worst)
}

/// Small, fast config used by [`validate_equivalences`].
pub fn validation_base_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.task.num_points = 2048;
    cfg.task.eval_points = 256;
    cfg.local_steps = 10;
    cfg
}

pub fn validate_equivalences(opts: EquivalenceOptions) -> Result<EquivalenceReport> {
    let mut checks = Vec::new();

    let relu = gradient_check(&MlpConfig::default(), 100, 8, 0)?;
    checks.push(CheckResult::new("gradient check (relu MLP)", relu, 1e-5));
    let tanh = gradient_check(
        &MlpConfig {
            activation: Activation::Tanh,
            hidden_dims: vec![8, 8],
            ..MlpConfig::default()
        },
        100,
        8,
        1,
    )?;
    checks.push(CheckResult::new("gradient check (tanh MLP)", tanh, 1e-5));

    let mut dn = 0.0f64;
    for (i, c) in [0.0, 0.1, 1.0].into_iter().enumerate() {
        dn = dn.max(dn_single_buffer_deviation(c, 100, i as u64)?);
    }
    checks.push(CheckResult::new("delayed Nesterov N=1 vs Nesterov", dn, 1e-12));

    let mut cf = 0.0f64;
    for (i, beta) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        cf = cf.max(closed_form_deviation(beta, i as u64)?);
    }
    let (_, hand) = sequential_nesterov_closed_form(&[0.0], &[1.0], 0.5, 4)?;
    cf = cf.max((hand[0] - 7.0625).abs());
    checks.push(CheckResult::new("sequential Nesterov closed form", cf, 1e-12));

    let sva = sync_via_async_deviation(&validation_base_config(), 100, opts.beta_perturbation)?;
    checks.push(CheckResult::new("sync via async", sva, 1e-9));

    Ok(EquivalenceReport { checks })
}
