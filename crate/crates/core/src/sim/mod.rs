//! Deterministic discrete-event simulation of asynchronous and synchronous
//! Local-SGD. Time is simulated; nothing here reads the wall clock.

pub mod profile;
pub mod runner;
pub mod server;
pub mod trainer;
pub mod worker;

pub use profile::{dylu_steps, DeviceProfile, Heterogeneity};
pub use runner::{
    run_async, run_async_observed, run_experiment, run_sync, run_sync_observed, JobRecord, RunOutput, SyncEvent,
};
pub use server::{Server, SimClock, SyncOutcome, SyncStrategy};
pub use trainer::LocalTrainer;
pub use worker::{get_completed_worker, Job, WorkerHandle, WorkerStatus};
