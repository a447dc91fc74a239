//! Pseudo-gradients and the transforms applied to them before the outer step.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// `θ_base - θ_final` from one finished job.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGradient {
    pub delta: ParamVector,
    pub worker_id: usize,
    /// Server version the job started from.
    pub base_version: u64,
    /// Server updates applied since `base_version`; set when the update is applied.
    pub staleness: u64,
}

impl PseudoGradient {
    pub fn new(delta: ParamVector, worker_id: usize, base_version: u64) -> Self {
        PseudoGradient {
            delta,
            worker_id,
            base_version,
            staleness: 0,
        }
    }
}

/// Scale by `(1 + staleness)^(-exponent)`.
pub fn poly_discount(mut g: PseudoGradient, exponent: f64) -> PseudoGradient {
    let weight = (1.0 + g.staleness as f64).powf(-exponent);
    g.delta.scale(weight);
    g
}

/// Drop updates older than `threshold`; `None` never drops.
pub fn staleness_filter(g: PseudoGradient, threshold: Option<u64>) -> Option<PseudoGradient> {
    match threshold {
        Some(limit) if g.staleness > limit => None,
        _ => Some(g),
    }
}

/// First-order correction `δ + λ (δ ⊙ δ) ⊙ (θ_now - θ_base)`.
pub fn delay_compensate(
    mut g: PseudoGradient,
    theta_now: &ParamVector,
    theta_base: &ParamVector,
    lambda: f64,
) -> Result<PseudoGradient> {
    g.delta.check_same_shape(theta_now)?;
    g.delta.check_same_shape(theta_base)?;
    for ((d, now), base) in g
        .delta
        .values_mut()
        .iter_mut()
        .zip(theta_now.values())
        .zip(theta_base.values())
    {
        *d += lambda * *d * *d * (now - base);
    }
    Ok(g)
}

/// FIFO buffer that releases the mean of every `capacity` pushes.
#[derive(Debug, Clone, PartialEq)]
pub struct AsyncBuffer {
    capacity: usize,
    items: VecDeque<ParamVector>,
}

impl AsyncBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("outer.buffer_size", "must be at least 1"));
        }
        Ok(AsyncBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `delta`; once full, empties the buffer and returns the mean.
    pub fn push(&mut self, delta: ParamVector) -> Result<Option<ParamVector>> {
        if let Some(first) = self.items.front() {
            first.check_same_shape(&delta)?;
        }
        self.items.push_back(delta);
        if self.items.len() < self.capacity {
            return Ok(None);
        }
        self.flush()
    }

    /// Mean of whatever is buffered, oldest first; `None` when empty.
    pub fn flush(&mut self) -> Result<Option<ParamVector>> {
        if self.items.is_empty() {
            return Ok(None);
        }
        let refs: Vec<&ParamVector> = self.items.iter().collect();
        let mean = ParamVector::mean(&refs)?;
        self.items.clear();
        Ok(Some(mean))
    }
}
