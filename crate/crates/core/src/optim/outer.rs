//! Server-side optimizers applied to pseudo-gradients.

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterKind {
    Sgd,
    Momentum,
    Nesterov,
    Adam,
}

impl OuterKind {
    pub fn name(self) -> &'static str {
        match self {
            OuterKind::Sgd => "sgd",
            OuterKind::Momentum => "momentum",
            OuterKind::Nesterov => "nesterov",
            OuterKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OuterKind::Sgd),
            "momentum" => Some(OuterKind::Momentum),
            "nesterov" => Some(OuterKind::Nesterov),
            "adam" => Some(OuterKind::Adam),
            _ => None,
        }
    }
}

/// Adam without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &ParamVector) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Nesterov with momentum folded into a buffer that only advances every
/// `n` pseudo-gradients.
///
/// Between flushes the model moves by `lr (c β m + g / n)`; on the flush
/// the momentum absorbs the buffered mean and the model moves by
/// `lr ((1 - c n + c) β m_new + g / n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedNesterovState {
    pub m: ParamVector,
    pub buffer: ParamVector,
    /// Pseudo-gradients received so far.
    pub t: u64,
    pub n: usize,
    pub c: f64,
    pub beta: f64,
}

impl DelayedNesterovState {
    pub fn new(like: &ParamVector, n: usize, c: f64, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("outer.buffer_size", "must be at least 1"));
        }
        let limit = 1.0 / n as f64;
        if !(0.0..=limit + f64::EPSILON).contains(&c) {
            return Err(Error::config(
                "outer.c",
                format!("must lie in [0, 1/N] = [0, {limit}], got {c}"),
            ));
        }
        Ok(DelayedNesterovState {
            m: like.zeros_like(),
            buffer: like.zeros_like(),
            t: 0,
            n,
            c,
            beta,
        })
    }

    /// Whether the next received pseudo-gradient triggers a momentum update.
    pub fn flushes_next(&self) -> bool {
        (self.t + 1) % self.n as u64 == 0
    }

    pub fn step(&mut self, params: &mut ParamVector, g: &ParamVector, lr: f64) -> Result<()> {
        params.check_same_shape(g)?;
        self.buffer.axpy(1.0, g)?;
        let n = self.n as f64;
        let beta = self.beta;
        if self.flushes_next() {
            let mix = (1.0 - self.c * n + self.c) * beta;
            let theta = params.values_mut();
            let m = self.m.values_mut();
            for (i, (&gi, &acc)) in g.values().iter().zip(self.buffer.values()).enumerate() {
                m[i] = beta * m[i] + acc / n;
                theta[i] -= lr * (mix * m[i] + gi / n);
            }
            self.buffer.fill(0.0);
        } else {
            let mix = self.c * beta;
            let theta = params.values_mut();
            for (i, (&gi, &mi)) in g.values().iter().zip(self.m.values()).enumerate() {
                theta[i] -= lr * (mix * mi + gi / n);
            }
        }
        self.t += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OuterOptState {
    Sgd,
    Momentum { m: ParamVector, beta: f64 },
    Nesterov { m: ParamVector, beta: f64 },
    Adam(AdamState),
    DelayedNesterov(DelayedNesterovState),
}

impl OuterOptState {
    pub fn new(kind: OuterKind, like: &ParamVector, beta: f64) -> Self {
        match kind {
            OuterKind::Sgd => OuterOptState::Sgd,
            OuterKind::Momentum => OuterOptState::Momentum {
                m: like.zeros_like(),
                beta,
            },
            OuterKind::Nesterov => OuterOptState::Nesterov {
                m: like.zeros_like(),
                beta,
            },
            OuterKind::Adam => OuterOptState::Adam(AdamState::new(like)),
        }
    }

    pub fn step(&mut self, params: &mut ParamVector, g: &ParamVector, lr: f64) -> Result<()> {
        match self {
            OuterOptState::Sgd => outer_sgd(params, g, lr),
            OuterOptState::Momentum { m, beta } => outer_momentum(m, *beta, params, g, lr),
            OuterOptState::Nesterov { m, beta } => outer_nesterov(m, *beta, params, g, lr),
            OuterOptState::Adam(state) => outer_adam(state, params, g, lr),
            OuterOptState::DelayedNesterov(state) => state.step(params, g, lr),
        }
    }
}

pub fn outer_sgd(params: &mut ParamVector, g: &ParamVector, lr: f64) -> Result<()> {
    params.axpy(-lr, g)
}

/// `m ← β m + g; θ ← θ - lr m`.
pub fn outer_momentum(m: &mut ParamVector, beta: f64, params: &mut ParamVector, g: &ParamVector, lr: f64) -> Result<()> {
    params.check_same_shape(g)?;
    params.check_same_shape(m)?;
    let theta = params.values_mut();
    for (i, (mi, &gi)) in m.values_mut().iter_mut().zip(g.values()).enumerate() {
        *mi = beta * *mi + gi;
        theta[i] -= lr * *mi;
    }
    Ok(())
}

/// `m ← β m + g; θ ← θ - lr (β m + g)` using the updated momentum.
///
/// Equal to `θ - lr (β² m_old + (1 + β) g)`.
pub fn outer_nesterov(m: &mut ParamVector, beta: f64, params: &mut ParamVector, g: &ParamVector, lr: f64) -> Result<()> {
    params.check_same_shape(g)?;
    params.check_same_shape(m)?;
    let theta = params.values_mut();
    for (i, (mi, &gi)) in m.values_mut().iter_mut().zip(g.values()).enumerate() {
        *mi = beta * *mi + gi;
        theta[i] -= lr * (beta * *mi + gi);
    }
    Ok(())
}

pub fn outer_adam(state: &mut AdamState, params: &mut ParamVector, g: &ParamVector, lr: f64) -> Result<()> {
    params.check_same_shape(g)?;
    params.check_same_shape(&state.m)?;
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powf(state.t as f64);
    let bc2 = 1.0 - b2.powf(state.t as f64);
    let theta = params.values_mut();
    let m = state.m.values_mut();
    let v = state.v.values_mut();
    for (i, &gi) in g.values().iter().enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        theta[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
    }
    Ok(())
}

/// Momentum and total displacement (in units of the learning rate) after
/// applying the same pseudo-gradient `g` four times in a row with Nesterov:
///
/// `m₄ = β⁴ m₀ + (1 + β + β² + β³) g`
/// `Δθ / lr = (4 + 4β + 3β² + 2β³ + β⁴) g + β² (1 + β + β² + β³) m₀`
///
/// Only `k = 4` is supported.
pub fn sequential_nesterov_closed_form(m0: &[f64], g: &[f64], beta: f64, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k != 4 {
        return Err(Error::Unsupported(format!(
            "closed form is only derived for 4 sequential applications, got {k}"
        )));
    }
    if m0.len() != g.len() {
        return Err(Error::Dimension(format!("momentum has {} entries, gradient {}", m0.len(), g.len())));
    }
    let b2 = beta * beta;
    let b3 = b2 * beta;
    let b4 = b3 * beta;
    let geo = 1.0 + beta + b2 + b3;
    let g_coef = 4.0 + 4.0 * beta + 3.0 * b2 + 2.0 * b3 + b4;
    let m = m0.iter().zip(g).map(|(&m, &g)| b4 * m + geo * g).collect();
    let disp = m0.iter().zip(g).map(|(&m, &g)| g_coef * g + b2 * geo * m).collect();
    Ok((m, disp))
}
