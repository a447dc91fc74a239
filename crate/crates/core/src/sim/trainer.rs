use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{next_batch, sample_shard, Shard};
use crate::error::{Error, Result};
use crate::model::Mlp;
use crate::optim::{InnerOptState, InnerOptimizer, LrScheduleSpec};
use crate::params::ParamVector;

/// Worker-side training shared by every simulated worker.
///
/// Inner optimizer state belongs to the worker and the learning-rate
/// position to the shard; both persist across jobs. All randomness (shard
/// choice and minibatches) comes from one stream consumed in job-assignment
/// order.
#[derive(Debug, Clone)]
pub struct LocalTrainer {
    mlp: Mlp,
    shards: Vec<Shard>,
    shard_steps: Vec<u64>,
    inner_states: Vec<InnerOptState>,
    schedule: LrScheduleSpec,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl LocalTrainer {
    pub fn new(
        mlp: Mlp,
        shards: Vec<Shard>,
        workers: usize,
        inner: InnerOptimizer,
        schedule: LrScheduleSpec,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        let zeros = mlp.zeros();
        let inner_states = (0..workers).map(|_| inner.init_state(&zeros)).collect();
        LocalTrainer {
            shard_steps: vec![0; shards.len()],
            inner_states,
            mlp,
            shards,
            schedule,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard_step(&self, shard: usize) -> u64 {
        self.shard_steps[shard]
    }

    pub fn sample_shard(&mut self) -> Result<usize> {
        sample_shard(&self.shards, &mut self.rng)
    }

    /// Runs `steps` inner steps of `worker` on `shard` starting from `base`.
    pub fn train(&mut self, worker: usize, shard: usize, steps: u64, base: &ParamVector) -> Result<ParamVector> {
        let mut params = base.clone();
        for _ in 0..steps {
            let lr = self.schedule.lr_at(self.shard_steps[shard]);
            let batch = next_batch(&mut self.shards[shard], self.batch_size, &mut self.rng)?;
            let (_, grad) = self.mlp.backward(&params, &batch)?;
            self.inner_states[worker].step(&mut params, &grad, lr)?;
            self.shard_steps[shard] += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("local training on shard {shard} diverged")));
        }
        Ok(params)
    }
}
