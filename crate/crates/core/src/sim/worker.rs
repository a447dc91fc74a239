use crate::optim::PseudoGradient;
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerStatus {
    Idle,
    /// A job is running; its update becomes available at `completed_time`.
    Training,
    /// The update has been synced and the worker waits for a new job.
    Completed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub shard_id: usize,
    pub steps: u64,
    /// Position in the shard's learning-rate schedule at the first step.
    pub lr_start: u64,
    pub base_version: u64,
    pub start_time: f64,
    pub completed_time: f64,
}

#[derive(Debug, Clone)]
pub struct WorkerHandle {
    pub id: usize,
    pub speed: f64,
    pub status: WorkerStatus,
    pub job: Option<Job>,
    pub update: Option<PseudoGradient>,
    /// Server model the current job started from.
    pub base_params: Option<ParamVector>,
}

impl WorkerHandle {
    pub fn new(id: usize, speed: f64) -> Self {
        WorkerHandle {
            id,
            speed,
            status: WorkerStatus::Idle,
            job: None,
            update: None,
            base_params: None,
        }
    }

    pub fn completed_time(&self) -> Option<f64> {
        self.job.as_ref().map(|j| j.completed_time)
    }
}

/// The earliest unsynced job, if it completes inside the grace window.
///
/// `window_start = None` means no window is open; the earliest job is
/// accepted and opens one. Ties go to the lowest worker id.
pub fn get_completed_worker(workers: &[WorkerHandle], grace: f64, window_start: Option<f64>) -> Option<usize> {
    let earliest = workers
        .iter()
        .filter(|w| w.status == WorkerStatus::Training)
        .filter_map(|w| w.completed_time().map(|t| (t, w.id)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))?;
    let (done_at, id) = earliest;
    match window_start {
        None => Some(id),
        Some(start) if done_at - start <= grace => Some(id),
        Some(_) => None,
    }
}
