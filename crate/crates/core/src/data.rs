//! Mixture-of-mixtures Gaussian data, sharding and progress-balanced shard sampling.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Batch;

/// Each class is itself a mixture of `components_per_class` isotropic Gaussians.
///
/// `means` is ordered class-major: component `c * components_per_class + r`
/// is the `r`-th component of class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub components_per_class: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    /// Per-coordinate variance of every component.
    pub covariance_scale: f64,
    pub num_points: usize,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec::grid(4, 4, 2, 0.05, 8192, 0)
    }
}

impl MixtureSpec {
    /// Component means on a unit-spaced square grid centred at the origin.
    ///
    /// Component `g = r * num_classes + c` (class `c`, member `r`) goes to grid
    /// row `g / side` and column `(g % side + 2 * row) % side`. The per-row
    /// shift interleaves the classes so no single hyperplane separates any
    /// class from the rest. Dimensions beyond the second are zero; a
    /// one-dimensional spec lays the components on a line instead.
    pub fn grid(
        num_classes: usize,
        components_per_class: usize,
        dim: usize,
        covariance_scale: f64,
        num_points: usize,
        seed: u64,
    ) -> Self {
        let total = num_classes * components_per_class;
        let side = if dim == 1 {
            total.max(1)
        } else {
            (total as f64).sqrt().ceil().max(1.0) as usize
        };
        let centre = (side as f64 - 1.0) / 2.0;
        let mut means = vec![vec![0.0; dim]; total];
        for c in 0..num_classes {
            for r in 0..components_per_class {
                let g = r * num_classes + c;
                let mean = &mut means[c * components_per_class + r];
                if dim == 1 {
                    mean[0] = g as f64 - centre;
                } else if dim >= 2 {
                    let row = g / side;
                    let col = (g % side + 2 * row) % side;
                    mean[0] = col as f64 - centre;
                    mean[1] = row as f64 - centre;
                }
            }
        }
        MixtureSpec {
            num_classes,
            components_per_class,
            dim,
            means,
            covariance_scale,
            num_points,
            seed,
        }
    }

    pub fn num_components(&self) -> usize {
        self.num_classes * self.components_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("task.num_classes", "must be at least 2"));
        }
        if self.components_per_class == 0 {
            return Err(Error::config("task.components_per_class", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("task.dim", "must be at least 1"));
        }
        if !(self.covariance_scale >= 0.0 && self.covariance_scale.is_finite()) {
            return Err(Error::config("task.covariance_scale", "must be finite and non-negative"));
        }
        if self.means.len() != self.num_components() {
            return Err(Error::config(
                "task.means",
                format!("expected {} means, got {}", self.num_components(), self.means.len()),
            ));
        }
        if self.means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::config("task.means", format!("every mean needs {} coordinates", self.dim)));
        }
        Ok(())
    }
}

/// Generated points together with the mixture component each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Batch,
    pub components: Vec<usize>,
}

/// Class uniformly, then component uniformly within the class, then
/// `N(mean, covariance_scale * I)`.
pub fn generate_dataset(spec: &MixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = spec.covariance_scale.sqrt();
    let mut points = Batch::empty(spec.dim);
    let mut components = Vec::with_capacity(spec.num_points);
    let mut row = vec![0.0; spec.dim];
    for _ in 0..spec.num_points {
        let class = rng.random_range(0..spec.num_classes);
        let member = rng.random_range(0..spec.components_per_class);
        let comp = class * spec.components_per_class + member;
        for (x, m) in row.iter_mut().zip(&spec.means[comp]) {
            let z: f64 = rng.sample(StandardNormal);
            *x = m + std * z;
        }
        points.push(&row, class);
        components.push(comp);
    }
    Ok(Dataset { points, components })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShardMode {
    Iid,
    ByComponent,
}

impl ShardMode {
    pub fn name(self) -> &'static str {
        match self {
            ShardMode::Iid => "iid",
            ShardMode::ByComponent => "by_component",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iid" => Some(ShardMode::Iid),
            "by_component" => Some(ShardMode::ByComponent),
            _ => None,
        }
    }
}

/// Share of rows that stay on their component's home shard in
/// [`ShardMode::ByComponent`]; the rest are spread uniformly.
pub const COMPONENT_AFFINITY: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub id: usize,
    pub points: Batch,
    /// Number of data points trained on so far.
    pub consumed: u64,
}

impl Shard {
    pub fn size(&self) -> usize {
        self.points.len()
    }
}

/// Partition a dataset into `k` shards.
///
/// `Iid` shuffles and deals contiguous blocks whose sizes differ by at most
/// one. `ByComponent` sends a row from component `c` to shard `c % k` with
/// probability [`COMPONENT_AFFINITY`] and to a uniformly random shard
/// otherwise; rows keep dataset order within each shard.
pub fn split_shards(dataset: &Dataset, k: usize, mode: ShardMode, seed: u64) -> Result<Vec<Shard>> {
    let n = dataset.points.len();
    if k == 0 {
        return Err(Error::Argument("shard count must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Argument(format!("cannot split {n} rows into {k} shards")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    match mode {
        ShardMode::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let base = n / k;
            let extra = n % k;
            let mut start = 0;
            for (s, m) in members.iter_mut().enumerate() {
                let len = base + usize::from(s < extra);
                m.extend_from_slice(&order[start..start + len]);
                start += len;
            }
        }
        ShardMode::ByComponent => {
            for (i, &comp) in dataset.components.iter().enumerate() {
                let s = if rng.random::<f64>() < COMPONENT_AFFINITY {
                    comp % k
                } else {
                    rng.random_range(0..k)
                };
                members[s].push(i);
            }
            // tiny datasets can leave a shard empty; refill from the largest
            while let Some(empty) = members.iter().position(Vec::is_empty) {
                let largest = (0..k).max_by_key(|&s| (members[s].len(), k - s)).unwrap_or(0);
                let row = members[largest].pop().expect("k <= n leaves a non-empty shard");
                members[empty].push(row);
            }
        }
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(id, rows)| Shard {
            id,
            points: dataset.points.select(&rows),
            consumed: 0,
        })
        .collect())
}

/// Sampling distribution over shards from their sizes and learned counts.
///
/// `p_i ∝ max(|D_i| / Σ|D| - n_i / Σn, 0)`. When nothing has been learned
/// yet, or no shard is under-sampled, falls back to `p_i ∝ |D_i|`.
pub fn shard_probabilities(sizes: &[usize], consumed: &[u64]) -> Vec<f64> {
    debug_assert_eq!(sizes.len(), consumed.len());
    let total_size: f64 = sizes.iter().map(|&s| s as f64).sum();
    let total_consumed: f64 = consumed.iter().map(|&c| c as f64).sum();
    let proportional = || sizes.iter().map(|&s| s as f64 / total_size).collect::<Vec<_>>();
    if total_consumed == 0.0 {
        return proportional();
    }
    let raw: Vec<f64> = sizes
        .iter()
        .zip(consumed)
        .map(|(&s, &c)| (s as f64 / total_size - c as f64 / total_consumed).max(0.0))
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return proportional();
    }
    raw.into_iter().map(|w| w / sum).collect()
}

/// Index drawn from a discrete distribution with one uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cumulative += p;
            if u < cumulative {
                return i;
            }
        }
    }
    // rounding left the cumulative sum just under 1
    last_positive
}

pub fn sample_shard<R: Rng + ?Sized>(shards: &[Shard], rng: &mut R) -> Result<usize> {
    if shards.is_empty() {
        return Err(Error::Argument("no shards to sample from".into()));
    }
    if shards.len() == 1 {
        return Ok(0);
    }
    let sizes: Vec<usize> = shards.iter().map(Shard::size).collect();
    let consumed: Vec<u64> = shards.iter().map(|s| s.consumed).collect();
    Ok(sample_index(&shard_probabilities(&sizes, &consumed), rng))
}

/// `batch_size` rows drawn with replacement; counts them as consumed.
pub fn next_batch<R: Rng + ?Sized>(shard: &mut Shard, batch_size: usize, rng: &mut R) -> Result<Batch> {
    if shard.points.is_empty() {
        return Err(Error::Argument(format!("shard {} is empty", shard.id)));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let n = shard.points.len();
    let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
    shard.consumed += batch_size as u64;
    Ok(shard.points.select(&indices))
}

/// CSV with columns `x0..x{d-1},label,shard_id`, shards in id order.
pub fn write_shards_csv<W: Write>(shards: &[Shard], mut out: W) -> std::io::Result<()> {
    let dim = shards.first().map_or(0, |s| s.points.dim());
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("shard_id".into());
    writeln!(out, "{}", header.join(","))?;
    for shard in shards {
        for i in 0..shard.size() {
            for x in shard.points.row(i) {
                write!(out, "{x},")?;
            }
            writeln!(out, "{},{}", shard.points.label(i), shard.id)?;
        }
    }
    out.flush()
}
