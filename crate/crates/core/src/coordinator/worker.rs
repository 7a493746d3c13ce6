use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::tasks::{Objective, Shard};
use crate::vector::DenseVector;

/// One worker's replica: its shard, the current block order and the weights.
///
/// With block size `b` the shard is cut into `n = |shard| / b` contiguous
/// blocks and the permutation acts on blocks; `b = 1` is per-example.
#[derive(Debug, Clone)]
pub struct WorkerState {
    worker_id: usize,
    examples: Vec<usize>,
    block: usize,
    perm: Permutation,
    weights: Vec<f64>,
    alpha: f64,
}

impl WorkerState {
    pub fn new(
        shard: Shard,
        block: usize,
        perm: Permutation,
        weights: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        if block == 0 || shard.examples.len() % block != 0 {
            return Err(Error::config(format!(
                "shard of {} examples does not split into blocks of {block}",
                shard.examples.len()
            )));
        }
        if perm.len() != shard.examples.len() / block {
            return Err(Error::config(format!(
                "permutation over {} blocks for a shard of {} blocks",
                perm.len(),
                shard.examples.len() / block
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::config("alpha must be finite"));
        }
        crate::vector::check_finite(&weights)?;
        Ok(Self {
            worker_id: shard.worker_id,
            examples: shard.examples,
            block,
            perm,
            weights,
            alpha,
        })
    }

    pub fn worker_id(&self) -> usize {
        self.worker_id
    }

    /// Number of permutation units (blocks) per epoch.
    pub fn steps(&self) -> usize {
        self.perm.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    pub fn set_permutation(&mut self, perm: Permutation) -> Result<()> {
        if perm.len() != self.perm.len() {
            return Err(Error::protocol(format!(
                "worker {} received a permutation of length {}, expected {}",
                self.worker_id,
                perm.len(),
                self.perm.len()
            )));
        }
        self.perm = perm;
        Ok(())
    }

    /// Example indices visited at 1-based `step`.
    pub fn block_at(&self, step: usize) -> &[usize] {
        let unit = self.perm[step - 1];
        &self.examples[unit * self.block..(unit + 1) * self.block]
    }

    /// Mean gradient of the block scheduled at 1-based `step`, at the current
    /// weights.
    pub fn compute_gradient(&self, objective: &Objective, step: usize) -> Result<DenseVector> {
        if step == 0 || step > self.steps() {
            return Err(Error::protocol(format!(
                "step {step} outside 1..={}",
                self.steps()
            )));
        }
        objective.mean_grad(&self.weights, self.block_at(step))
    }

    /// `w ← w − α·avg`.
    pub fn apply(&mut self, avg: &DenseVector) -> Result<()> {
        if avg.dim() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: avg.dim(),
            });
        }
        for (w, g) in self.weights.iter_mut().zip(avg.as_slice()) {
            *w -= self.alpha * g;
        }
        crate::vector::check_finite(&self.weights)
    }
}

pub fn worker_step(state: &mut WorkerState, avg: &DenseVector) -> Result<()> {
    state.apply(avg)
}

/// Stale-mean centering: gradients of epoch `t` are centered by the mean of
/// all gradients seen in epoch `t − 1` (zero in the first epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct StaleMeanState {
    prev: Vec<f64>,
    acc: Vec<f64>,
    count: usize,
}

impl StaleMeanState {
    pub fn new(dim: usize) -> Self {
        Self {
            prev: vec![0.0; dim],
            acc: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn prev_epoch_mean(&self) -> &[f64] {
        &self.prev
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Writes `g − prev_epoch_mean` into `out` and adds `g` to the running
    /// accumulator.
    pub fn center_and_accumulate(&mut self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(g.iter().zip(&self.prev).map(|(x, m)| x - m));
        for (a, x) in self.acc.iter_mut().zip(g) {
            *a += x;
        }
        self.count += 1;
    }

    /// Ends the epoch: the accumulated mean becomes the stale mean.
    pub fn roll(&mut self) {
        if self.count > 0 {
            let count = self.count as f64;
            for (p, a) in self.prev.iter_mut().zip(&self.acc) {
                *p = a / count;
            }
        }
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        self.count = 0;
    }
}

/// Largest inf-norm drift from `start` along one epoch's weight trajectory.
pub fn delta_t(start: &[f64], trajectory: &[Vec<f64>]) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::domain("delta_t of an empty trajectory"));
    }
    let mut max = 0.0f64;
    for w in trajectory {
        if w.len() != start.len() {
            return Err(Error::DimensionMismatch {
                expected: start.len(),
                got: w.len(),
            });
        }
        for (a, b) in w.iter().zip(start) {
            max = max.max((a - b).abs());
        }
    }
    Ok(max)
}

/// Running Δ_t accumulator that avoids storing the trajectory.
#[derive(Debug, Clone)]
pub(crate) struct DriftTracker {
    start: Vec<f64>,
    max: f64,
}

impl DriftTracker {
    pub(crate) fn new(start: &[f64]) -> Self {
        Self {
            start: start.to_vec(),
            max: 0.0,
        }
    }

    pub(crate) fn observe(&mut self, w: &[f64]) {
        for (a, b) in w.iter().zip(&self.start) {
            self.max = self.max.max((a - b).abs());
        }
    }

    pub(crate) fn value(&self) -> f64 {
        self.max
    }
}
