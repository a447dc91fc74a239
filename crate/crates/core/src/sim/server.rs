use crate::config::{ExperimentConfig, StrategyKind};
use crate::error::Result;
use crate::optim::{
    delay_compensate, poly_discount, staleness_filter, AsyncBuffer, DelayedNesterovState, OuterOptState,
    PseudoGradient,
};
use crate::params::ParamVector;

/// How the server folds one pseudo-gradient into the model.
#[derive(Debug, Clone, PartialEq)]
pub enum SyncStrategy {
    Vanilla,
    Poly { exponent: f64 },
    /// Poly discounting plus dropping updates staler than `threshold`.
    PolyThres { exponent: f64, threshold: Option<u64> },
    DelayComp { lambda: f64 },
    /// Outer step on the mean of every `N` buffered updates.
    AsyncBuffer(AsyncBuffer),
    /// The outer state is a [`DelayedNesterovState`].
    DelayedNesterov,
}

impl SyncStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SyncStrategy::Vanilla => "vanilla",
            SyncStrategy::Poly { .. } => "poly",
            SyncStrategy::PolyThres { .. } => "polythres",
            SyncStrategy::DelayComp { .. } => "delay_comp",
            SyncStrategy::AsyncBuffer(_) => "async_buffer",
            SyncStrategy::DelayedNesterov => "delayed_nesterov",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    /// Simulated seconds.
    pub now: f64,
    pub server_version: u64,
    pub total_local_updates: u64,
}

impl SimClock {
    pub fn new() -> Self {
        SimClock {
            now: 0.0,
            server_version: 0,
            total_local_updates: 0,
        }
    }

    /// Moves time forward; never backwards.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncOutcome {
    pub staleness: u64,
    /// False when the strategy discarded the update.
    pub applied: bool,
    /// Whether the model parameters changed.
    pub params_changed: bool,
}

/// The server model, its outer optimizer and the simulation clock.
#[derive(Debug, Clone)]
pub struct Server {
    pub params: ParamVector,
    pub outer: OuterOptState,
    pub strategy: SyncStrategy,
    pub lr: f64,
    pub clock: SimClock,
}

impl Server {
    pub fn new(params: ParamVector, outer: OuterOptState, strategy: SyncStrategy, lr: f64) -> Self {
        Server {
            params,
            outer,
            strategy,
            lr,
            clock: SimClock::new(),
        }
    }

    pub fn from_config(params: ParamVector, cfg: &ExperimentConfig) -> Result<Self> {
        let o = &cfg.outer;
        let kind_state = || OuterOptState::new(o.optimizer, &params, o.beta);
        let (strategy, outer) = match o.strategy {
            StrategyKind::Vanilla => (SyncStrategy::Vanilla, kind_state()),
            StrategyKind::Poly => (
                SyncStrategy::Poly {
                    exponent: o.poly_exponent,
                },
                kind_state(),
            ),
            StrategyKind::PolyThres => (
                SyncStrategy::PolyThres {
                    exponent: o.poly_exponent,
                    threshold: o.threshold,
                },
                kind_state(),
            ),
            StrategyKind::DelayComp => (SyncStrategy::DelayComp { lambda: o.lambda }, kind_state()),
            StrategyKind::AsyncBuffer => (
                SyncStrategy::AsyncBuffer(AsyncBuffer::new(cfg.buffer_size())?),
                kind_state(),
            ),
            StrategyKind::DelayedNesterov => (
                SyncStrategy::DelayedNesterov,
                OuterOptState::DelayedNesterov(DelayedNesterovState::new(&params, cfg.buffer_size(), o.c, o.beta)?),
            ),
        };
        Ok(Server::new(params, outer, strategy, o.lr))
    }

    /// Applies one pseudo-gradient and bumps the server version.
    ///
    /// `base` is the server model the job started from; only delay
    /// compensation reads it. Discarded updates still advance the version.
    pub fn apply_sync(&mut self, mut g: PseudoGradient, base: &ParamVector) -> Result<SyncOutcome> {
        g.staleness = self.clock.server_version - g.base_version;
        let staleness = g.staleness;
        let mut outcome = SyncOutcome {
            staleness,
            applied: true,
            params_changed: true,
        };
        match &mut self.strategy {
            SyncStrategy::Vanilla | SyncStrategy::DelayedNesterov => {
                self.outer.step(&mut self.params, &g.delta, self.lr)?;
            }
            SyncStrategy::Poly { exponent } => {
                let g = poly_discount(g, *exponent);
                self.outer.step(&mut self.params, &g.delta, self.lr)?;
            }
            SyncStrategy::PolyThres { exponent, threshold } => match staleness_filter(g, *threshold) {
                Some(g) => {
                    let g = poly_discount(g, *exponent);
                    self.outer.step(&mut self.params, &g.delta, self.lr)?;
                }
                None => {
                    outcome.applied = false;
                    outcome.params_changed = false;
                }
            },
            SyncStrategy::DelayComp { lambda } => {
                let g = delay_compensate(g, &self.params, base, *lambda)?;
                self.outer.step(&mut self.params, &g.delta, self.lr)?;
            }
            SyncStrategy::AsyncBuffer(buffer) => match buffer.push(g.delta)? {
                Some(mean) => self.outer.step(&mut self.params, &mean, self.lr)?,
                None => outcome.params_changed = false,
            },
        }
        self.clock.server_version += 1;
        Ok(outcome)
    }
}
