use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Linear warmup to `max_lr`, then cosine decay to `min_lr` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrScheduleSpec {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr.is_finite()) {
            return Err(Error::config("inner.lr_min", "must be positive"));
        }
        if !(self.max_lr > self.min_lr && self.max_lr.is_finite()) {
            return Err(Error::config("inner.lr", "must be finite and greater than inner.lr_min"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("inner.total_steps", "must be positive"));
        }
        Ok(())
    }

    /// Learning rate at step `t` of a shard's own schedule.
    ///
    /// The decay ratio is clamped to `[0, 1]`, so steps past `total_steps`
    /// keep `min_lr`. A window of zero length jumps straight to `min_lr`
    /// after the warmup step.
    pub fn lr_at(&self, t: u64) -> f64 {
        if t < self.warmup_steps {
            return t as f64 * self.max_lr / self.warmup_steps as f64;
        }
        let window = self.total_steps.saturating_sub(self.warmup_steps);
        let since = t - self.warmup_steps;
        let ratio = if window == 0 {
            if since == 0 {
                0.0
            } else {
                1.0
            }
        } else {
            (since as f64 / window as f64).clamp(0.0, 1.0)
        };
        self.min_lr + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (ratio * PI).cos())
    }
}
