//! Worker-side optimizers applied to true minibatch gradients.

use crate::error::Result;
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerOptimizer {
    Sgd,
    AdamW(AdamWHyper),
}

impl InnerOptimizer {
    pub fn name(&self) -> &'static str {
        match self {
            InnerOptimizer::Sgd => "sgd",
            InnerOptimizer::AdamW(_) => "adamw",
        }
    }

    pub fn init_state(&self, like: &ParamVector) -> InnerOptState {
        match *self {
            InnerOptimizer::Sgd => InnerOptState::Sgd,
            InnerOptimizer::AdamW(hyper) => InnerOptState::AdamW(AdamWState::new(like, hyper)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
    pub hyper: AdamWHyper,
}

impl AdamWState {
    pub fn new(like: &ParamVector, hyper: AdamWHyper) -> Self {
        AdamWState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            hyper,
        }
    }

    /// One decoupled-weight-decay Adam step:
    /// `θ ← θ - lr (m̂ / (sqrt(v̂) + eps) + wd θ)`.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        params.check_same_shape(grad)?;
        params.check_same_shape(&self.m)?;
        let AdamWHyper {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        self.t += 1;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        let theta = params.values_mut();
        let m = self.m.values_mut();
        let v = self.v.values_mut();
        for (i, &g) in grad.values().iter().enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * theta[i]);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InnerOptState {
    Sgd,
    AdamW(AdamWState),
}

impl InnerOptState {
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        match self {
            InnerOptState::Sgd => sgd_step(params, grad, lr),
            InnerOptState::AdamW(state) => state.step(params, grad, lr),
        }
    }
}

/// `θ ← θ - lr g`.
pub fn sgd_step(params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
    params.axpy(-lr, grad)
}
