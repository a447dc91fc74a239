//! Inner and outer optimizers, pseudo-gradient transforms and the per-shard
//! learning-rate schedule.

pub mod inner;
pub mod lr;
pub mod outer;
pub mod staleness;

pub use inner::{sgd_step, AdamWHyper, AdamWState, InnerOptState, InnerOptimizer};
pub use lr::LrScheduleSpec;
pub use outer::{
    outer_adam, outer_momentum, outer_nesterov, outer_sgd, sequential_nesterov_closed_form, AdamState,
    DelayedNesterovState, OuterKind, OuterOptState,
};
pub use staleness::{delay_compensate, poly_discount, staleness_filter, AsyncBuffer, PseudoGradient};
