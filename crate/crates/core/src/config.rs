//! Experiment configuration in a flat `section.key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; omitted
//! keys take the defaults listed in [`ExperimentConfig::default`]. Unknown
//! or repeated keys are errors, and every error names the key involved.

use std::fmt;
use std::str::FromStr;

use crate::data::{MixtureSpec, ShardMode};
use crate::error::{Error, Result};
use crate::model::{Activation, MlpConfig};
use crate::optim::{AdamWHyper, InnerOptimizer, LrScheduleSpec, OuterKind};
use crate::sim::profile::{DeviceProfile, Heterogeneity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Async,
    Sync,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Async => "async",
            Mode::Sync => "sync",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// The configured outer optimizer on every pseudo-gradient as it arrives.
    Vanilla,
    Poly,
    PolyThres,
    DelayComp,
    AsyncBuffer,
    DelayedNesterov,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Vanilla => "vanilla",
            StrategyKind::Poly => "poly",
            StrategyKind::PolyThres => "polythres",
            StrategyKind::DelayComp => "delay_comp",
            StrategyKind::AsyncBuffer => "async_buffer",
            StrategyKind::DelayedNesterov => "delayed_nesterov",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "vanilla" => StrategyKind::Vanilla,
            "poly" => StrategyKind::Poly,
            "polythres" => StrategyKind::PolyThres,
            "delay_comp" => StrategyKind::DelayComp,
            "async_buffer" => StrategyKind::AsyncBuffer,
            "delayed_nesterov" => StrategyKind::DelayedNesterov,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpeedProfile {
    Preset(Heterogeneity),
    Explicit(Vec<f64>),
}

impl SpeedProfile {
    pub fn resolve(&self, k: usize) -> DeviceProfile {
        match self {
            SpeedProfile::Preset(level) => level.profile(k),
            SpeedProfile::Explicit(speeds) => DeviceProfile {
                speeds: speeds.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub num_classes: usize,
    pub components_per_class: usize,
    pub dim: usize,
    pub num_points: usize,
    pub covariance_scale: f64,
    pub eval_points: usize,
    pub shard_mode: ShardMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerConfig {
    pub optimizer: InnerOptimizer,
    pub lr: f64,
    pub lr_min: f64,
    pub warmup: u64,
    /// Per-shard schedule length; `None` means `t_max / k`.
    pub total_steps: Option<u64>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    pub strategy: StrategyKind,
    /// Optimizer for every strategy except delayed Nesterov.
    pub optimizer: OuterKind,
    pub lr: f64,
    pub beta: f64,
    /// Buffer size N for `async_buffer` and `delayed_nesterov`; `None` means `k`.
    pub buffer_size: Option<usize>,
    pub c: f64,
    pub lambda: f64,
    pub poly_exponent: f64,
    /// `None` never discards.
    pub threshold: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub run: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub task: TaskConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub workers: usize,
    pub profile: SpeedProfile,
    pub inner: InnerConfig,
    pub outer: OuterConfig,
    /// Local steps per job for the fastest worker (H).
    pub local_steps: u64,
    pub dylu: bool,
    /// `None` means half a step of the slowest worker.
    pub grace_period: Option<f64>,
    pub t_max: u64,
    /// Stop before syncing any job that completes after this simulated time.
    pub max_sim_time: Option<f64>,
    pub eval_every: u64,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Async,
            task: TaskConfig {
                num_classes: 4,
                components_per_class: 4,
                dim: 2,
                num_points: 8192,
                covariance_scale: 0.05,
                eval_points: 2048,
                shard_mode: ShardMode::ByComponent,
            },
            hidden: vec![32],
            activation: Activation::Relu,
            workers: 4,
            profile: SpeedProfile::Preset(Heterogeneity::Very),
            inner: InnerConfig {
                optimizer: InnerOptimizer::AdamW(AdamWHyper::default()),
                lr: 0.005,
                lr_min: 1e-4,
                warmup: 50,
                total_steps: None,
                batch_size: 32,
            },
            outer: OuterConfig {
                strategy: StrategyKind::Vanilla,
                optimizer: OuterKind::Nesterov,
                lr: 0.4,
                beta: 0.9,
                buffer_size: None,
                c: 0.0,
                lambda: 0.5,
                poly_exponent: 0.5,
                threshold: Some(10),
            },
            local_steps: 50,
            dylu: false,
            grace_period: None,
            t_max: 20_000,
            max_sim_time: None,
            eval_every: 10,
            seeds: Seeds {
                data: 0,
                init: 0,
                run: 0,
            },
        }
    }
}

const KEYS: &[&str] = &[
    "mode",
    "task.num_classes",
    "task.components_per_class",
    "task.dim",
    "task.num_points",
    "task.covariance_scale",
    "task.eval_points",
    "task.shard_mode",
    "model.hidden",
    "model.activation",
    "workers.k",
    "workers.profile",
    "inner.optimizer",
    "inner.lr",
    "inner.lr_min",
    "inner.warmup",
    "inner.total_steps",
    "inner.batch_size",
    "inner.beta1",
    "inner.beta2",
    "inner.eps",
    "inner.weight_decay",
    "outer.strategy",
    "outer.optimizer",
    "outer.lr",
    "outer.beta",
    "outer.buffer_size",
    "outer.c",
    "outer.lambda",
    "outer.poly_exponent",
    "outer.threshold",
    "sched.h",
    "sched.dylu",
    "sched.grace_period",
    "sched.t_max",
    "sched.max_sim_time",
    "eval.every",
    "seed.data",
    "seed.init",
    "seed.run",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}` as a number")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

/// `auto` maps to `None`.
fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

/// `inf` maps to `None`.
fn parse_unbounded<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "inf" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn hyper_mut<'a>(cfg: &'a mut ExperimentConfig, key: &str) -> Result<&'a mut AdamWHyper> {
    match &mut cfg.inner.optimizer {
        InnerOptimizer::AdamW(h) => Ok(h),
        InnerOptimizer::Sgd => Err(Error::config(key, "only applies when inner.optimizer = adamw")),
    }
}

impl ExperimentConfig {
    /// Parse and validate a config file's contents.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::config(key, "unknown key"));
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(Error::config(key, "given more than once"));
            }
            entries.push((key, value.trim().to_string()));
        }
        // the optimizer choice decides which hyperparameter keys are legal
        entries.sort_by_key(|(k, _)| k != "inner.optimizer");
        let mut cfg = ExperimentConfig::default();
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key from its textual value without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => {
                self.mode = match value {
                    "async" => Mode::Async,
                    "sync" => Mode::Sync,
                    _ => return Err(Error::config(key, format!("expected async or sync, got `{value}`"))),
                }
            }
            "task.num_classes" => self.task.num_classes = parse_num(key, value)?,
            "task.components_per_class" => self.task.components_per_class = parse_num(key, value)?,
            "task.dim" => self.task.dim = parse_num(key, value)?,
            "task.num_points" => self.task.num_points = parse_num(key, value)?,
            "task.covariance_scale" => self.task.covariance_scale = parse_num(key, value)?,
            "task.eval_points" => self.task.eval_points = parse_num(key, value)?,
            "task.shard_mode" => {
                self.task.shard_mode = ShardMode::parse(value)
                    .ok_or_else(|| Error::config(key, format!("expected iid or by_component, got `{value}`")))?
            }
            "model.hidden" => self.hidden = parse_list(key, value)?,
            "model.activation" => {
                self.activation = Activation::parse(value)
                    .ok_or_else(|| Error::config(key, format!("expected relu or tanh, got `{value}`")))?
            }
            "workers.k" => self.workers = parse_num(key, value)?,
            "workers.profile" => {
                self.profile = match Heterogeneity::parse(value) {
                    Some(level) => SpeedProfile::Preset(level),
                    None => SpeedProfile::Explicit(parse_list(key, value).map_err(|_| {
                        Error::config(
                            key,
                            format!("expected no, slight, moderate, very or a speed list, got `{value}`"),
                        )
                    })?),
                }
            }
            "inner.optimizer" => {
                self.inner.optimizer = match value {
                    "sgd" => InnerOptimizer::Sgd,
                    "adamw" => InnerOptimizer::AdamW(AdamWHyper::default()),
                    _ => return Err(Error::config(key, format!("expected sgd or adamw, got `{value}`"))),
                }
            }
            "inner.lr" => self.inner.lr = parse_num(key, value)?,
            "inner.lr_min" => self.inner.lr_min = parse_num(key, value)?,
            "inner.warmup" => self.inner.warmup = parse_num(key, value)?,
            "inner.total_steps" => self.inner.total_steps = parse_auto(key, value)?,
            "inner.batch_size" => self.inner.batch_size = parse_num(key, value)?,
            "inner.beta1" => hyper_mut(self, key)?.beta1 = parse_num(key, value)?,
            "inner.beta2" => hyper_mut(self, key)?.beta2 = parse_num(key, value)?,
            "inner.eps" => hyper_mut(self, key)?.eps = parse_num(key, value)?,
            "inner.weight_decay" => hyper_mut(self, key)?.weight_decay = parse_num(key, value)?,
            "outer.strategy" => {
                self.outer.strategy = StrategyKind::parse(value).ok_or_else(|| {
                    Error::config(
                        key,
                        format!(
                            "expected vanilla, poly, polythres, delay_comp, async_buffer or delayed_nesterov, got `{value}`"
                        ),
                    )
                })?
            }
            "outer.optimizer" => {
                self.outer.optimizer = OuterKind::parse(value).ok_or_else(|| {
                    Error::config(key, format!("expected sgd, momentum, nesterov or adam, got `{value}`"))
                })?
            }
            "outer.lr" => self.outer.lr = parse_num(key, value)?,
            "outer.beta" => self.outer.beta = parse_num(key, value)?,
            "outer.buffer_size" => self.outer.buffer_size = parse_auto(key, value)?,
            "outer.c" => self.outer.c = parse_num(key, value)?,
            "outer.lambda" => self.outer.lambda = parse_num(key, value)?,
            "outer.poly_exponent" => self.outer.poly_exponent = parse_num(key, value)?,
            "outer.threshold" => self.outer.threshold = parse_unbounded(key, value)?,
            "sched.h" => self.local_steps = parse_num(key, value)?,
            "sched.dylu" => self.dylu = parse_bool(key, value)?,
            "sched.grace_period" => self.grace_period = parse_auto(key, value)?,
            "sched.t_max" => self.t_max = parse_num(key, value)?,
            "sched.max_sim_time" => self.max_sim_time = parse_unbounded(key, value)?,
            "eval.every" => self.eval_every = parse_num(key, value)?,
            "seed.data" => self.seeds.data = parse_num(key, value)?,
            "seed.init" => self.seeds.init = parse_num(key, value)?,
            "seed.run" => self.seeds.run = parse_num(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.mixture_spec().validate()?;
        self.mlp_config().validate()?;
        if self.task.num_points == 0 {
            return Err(Error::config("task.num_points", "must be positive"));
        }
        if self.task.eval_points == 0 {
            return Err(Error::config("task.eval_points", "must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers.k", "must be at least 1"));
        }
        if self.workers > self.task.num_points {
            return Err(Error::config("workers.k", "more workers than data points"));
        }
        if let SpeedProfile::Explicit(speeds) = &self.profile {
            if speeds.len() != self.workers {
                return Err(Error::config(
                    "workers.profile",
                    format!("{} speeds given for {} workers", speeds.len(), self.workers),
                ));
            }
        }
        if self
            .speeds()
            .iter()
            .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::config("workers.profile", "speeds must be positive and finite"));
        }
        self.lr_schedule().validate()?;
        if self.inner.batch_size == 0 {
            return Err(Error::config("inner.batch_size", "must be at least 1"));
        }
        if let InnerOptimizer::AdamW(h) = &self.inner.optimizer {
            if !(0.0..1.0).contains(&h.beta1) {
                return Err(Error::config("inner.beta1", "must lie in [0, 1)"));
            }
            if !(0.0..1.0).contains(&h.beta2) {
                return Err(Error::config("inner.beta2", "must lie in [0, 1)"));
            }
            if !(h.eps > 0.0) {
                return Err(Error::config("inner.eps", "must be positive"));
            }
            if !(h.weight_decay >= 0.0) {
                return Err(Error::config("inner.weight_decay", "must be non-negative"));
            }
        }
        if !(self.outer.lr > 0.0 && self.outer.lr.is_finite()) {
            return Err(Error::config("outer.lr", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.outer.beta) {
            return Err(Error::config("outer.beta", "must lie in [0, 1)"));
        }
        let n = self.buffer_size();
        if n == 0 {
            return Err(Error::config("outer.buffer_size", "must be at least 1"));
        }
        if self.outer.strategy == StrategyKind::DelayedNesterov {
            let limit = 1.0 / n as f64;
            if !(self.outer.c >= 0.0 && self.outer.c <= limit + f64::EPSILON) {
                return Err(Error::config(
                    "outer.c",
                    format!("must lie in [0, 1/N] = [0, {limit}] for N = {n}, got {}", self.outer.c),
                ));
            }
        }
        if !(self.outer.lambda >= 0.0 && self.outer.lambda.is_finite()) {
            return Err(Error::config("outer.lambda", "must be non-negative"));
        }
        if !(self.outer.poly_exponent >= 0.0 && self.outer.poly_exponent.is_finite()) {
            return Err(Error::config("outer.poly_exponent", "must be non-negative"));
        }
        if self.mode == Mode::Sync && self.outer.strategy != StrategyKind::Vanilla {
            return Err(Error::config("outer.strategy", "sync mode only supports vanilla"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("sched.h", "must be at least 1"));
        }
        if let Some(g) = self.grace_period {
            if !(g >= 0.0) {
                return Err(Error::config("sched.grace_period", "must be non-negative"));
            }
        }
        if let Some(t) = self.max_sim_time {
            if !(t >= 0.0) {
                return Err(Error::config("sched.max_sim_time", "must be non-negative"));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval.every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.profile.resolve(self.workers).speeds
    }

    pub fn device_profile(&self) -> DeviceProfile {
        self.profile.resolve(self.workers)
    }

    pub fn buffer_size(&self) -> usize {
        self.outer.buffer_size.unwrap_or(self.workers)
    }

    pub fn grace_period(&self) -> f64 {
        self.grace_period.unwrap_or_else(|| {
            let slowest = self.speeds().into_iter().fold(f64::INFINITY, f64::min);
            0.5 / slowest
        })
    }

    pub fn lr_schedule(&self) -> LrScheduleSpec {
        LrScheduleSpec {
            max_lr: self.inner.lr,
            min_lr: self.inner.lr_min,
            warmup_steps: self.inner.warmup,
            total_steps: self
                .inner
                .total_steps
                .unwrap_or_else(|| (self.t_max / self.workers.max(1) as u64).max(1)),
        }
    }

    pub fn mixture_spec(&self) -> MixtureSpec {
        MixtureSpec::grid(
            self.task.num_classes,
            self.task.components_per_class,
            self.task.dim,
            self.task.covariance_scale,
            self.task.num_points,
            self.seeds.data,
        )
    }

    /// Held-out points from the same mixture on an independent stream.
    pub fn eval_mixture_spec(&self) -> MixtureSpec {
        MixtureSpec {
            num_points: self.task.eval_points,
            seed: self.seeds.data ^ 0x5eed_e7a1_0000_0001,
            ..self.mixture_spec()
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: self.task.dim,
            hidden_dims: self.hidden.clone(),
            num_classes: self.task.num_classes,
            activation: self.activation,
        }
    }

    /// Short label such as `async/adamw+nesterov` or `async/dn+dylu`.
    pub fn strategy_tag(&self) -> String {
        let outer = match self.outer.strategy {
            StrategyKind::Vanilla => self.outer.optimizer.name().to_string(),
            StrategyKind::DelayedNesterov => "dn".to_string(),
            other => format!("{}:{}", other.name(), self.outer.optimizer.name()),
        };
        let dylu = if self.dylu && self.mode == Mode::Async { "+dylu" } else { "" };
        format!("{}/{}+{}{}", self.mode.name(), self.inner.optimizer.name(), outer, dylu)
    }
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), |v| v.to_string())
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Canonical text form listing every key; parses back to an equal config.
impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode = {}", self.mode.name())?;
        writeln!(f, "task.num_classes = {}", self.task.num_classes)?;
        writeln!(f, "task.components_per_class = {}", self.task.components_per_class)?;
        writeln!(f, "task.dim = {}", self.task.dim)?;
        writeln!(f, "task.num_points = {}", self.task.num_points)?;
        writeln!(f, "task.covariance_scale = {}", self.task.covariance_scale)?;
        writeln!(f, "task.eval_points = {}", self.task.eval_points)?;
        writeln!(f, "task.shard_mode = {}", self.task.shard_mode.name())?;
        writeln!(f, "model.hidden = {}", join(&self.hidden))?;
        writeln!(f, "model.activation = {}", self.activation.name())?;
        writeln!(f, "workers.k = {}", self.workers)?;
        let profile = match &self.profile {
            SpeedProfile::Preset(level) => level.name().to_string(),
            SpeedProfile::Explicit(speeds) => join(speeds),
        };
        writeln!(f, "workers.profile = {profile}")?;
        writeln!(f, "inner.optimizer = {}", self.inner.optimizer.name())?;
        writeln!(f, "inner.lr = {}", self.inner.lr)?;
        writeln!(f, "inner.lr_min = {}", self.inner.lr_min)?;
        writeln!(f, "inner.warmup = {}", self.inner.warmup)?;
        writeln!(f, "inner.total_steps = {}", fmt_opt(&self.inner.total_steps, "auto"))?;
        writeln!(f, "inner.batch_size = {}", self.inner.batch_size)?;
        if let InnerOptimizer::AdamW(h) = &self.inner.optimizer {
            writeln!(f, "inner.beta1 = {}", h.beta1)?;
            writeln!(f, "inner.beta2 = {}", h.beta2)?;
            writeln!(f, "inner.eps = {}", h.eps)?;
            writeln!(f, "inner.weight_decay = {}", h.weight_decay)?;
        }
        writeln!(f, "outer.strategy = {}", self.outer.strategy.name())?;
        writeln!(f, "outer.optimizer = {}", self.outer.optimizer.name())?;
        writeln!(f, "outer.lr = {}", self.outer.lr)?;
        writeln!(f, "outer.beta = {}", self.outer.beta)?;
        writeln!(f, "outer.buffer_size = {}", fmt_opt(&self.outer.buffer_size, "auto"))?;
        writeln!(f, "outer.c = {}", self.outer.c)?;
        writeln!(f, "outer.lambda = {}", self.outer.lambda)?;
        writeln!(f, "outer.poly_exponent = {}", self.outer.poly_exponent)?;
        writeln!(f, "outer.threshold = {}", fmt_opt(&self.outer.threshold, "inf"))?;
        writeln!(f, "sched.h = {}", self.local_steps)?;
        writeln!(f, "sched.dylu = {}", self.dylu)?;
        writeln!(f, "sched.grace_period = {}", fmt_opt(&self.grace_period, "auto"))?;
        writeln!(f, "sched.t_max = {}", self.t_max)?;
        writeln!(f, "sched.max_sim_time = {}", fmt_opt(&self.max_sim_time, "inf"))?;
        writeln!(f, "eval.every = {}", self.eval_every)?;
        writeln!(f, "seed.data = {}", self.seeds.data)?;
        writeln!(f, "seed.init = {}", self.seeds.init)?;
        write!(f, "seed.run = {}", self.seeds.run)
    }
}
