//! Simulator and optimizers for asynchronous Local-SGD with heterogeneous
//! workers, on a small Gaussian-mixture classification task.
//!
//! * [`model`]: feed-forward classifier with exact gradients.
//! * [`data`]: mixture-of-mixtures data, shards and progress-balanced shard sampling.
//! * [`optim`]: inner/outer optimizers, delayed Nesterov and staleness transforms.
//! * [`sim`]: discrete-event async scheduler and the synchronous reference loop.
//! * [`experiment`]: runs, sweeps and built-in equivalence checks.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod sim;

pub use config::{ExperimentConfig, Mode, StrategyKind};
pub use error::{Error, Result};
pub use metrics::{MetricsLog, MetricsRow, CSV_HEADER};
pub use model::{Activation, Batch, EvalMetrics, Mlp, MlpConfig};
pub use params::{LayerShape, ParamVector};
