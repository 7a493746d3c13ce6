//! Herding objectives, the sign-based reorder step, and one-step pair
//! balancing over a static vector set.
//!
//! All prefix sums are accumulated sequentially: position `j` ascending and,
//! inside a position, worker `i` ascending. The global mean is summed in the
//! same worker-major order and divided once.

use crate::balance::{pair_balance, BalanceState, Sign, SignEngine};
use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::vector::DenseVector;

/// `m × n` vectors of dimension `d`, stored worker-major in one buffer.
/// A centralized set is the `m = 1` case.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    workers: usize,
    per_worker: usize,
    dim: usize,
    data: Vec<f64>,
}

impl VectorSet {
    pub fn centralized(vectors: Vec<DenseVector>) -> Result<Self> {
        Self::parallel(vec![vectors])
    }

    pub fn parallel(workers: Vec<Vec<DenseVector>>) -> Result<Self> {
        let m = workers.len();
        let n = workers.first().map_or(0, Vec::len);
        if m == 0 || n == 0 {
            return Err(Error::domain("vector set must be non-empty"));
        }
        let d = workers[0][0].dim();
        let mut data = Vec::with_capacity(m * n * d);
        for (i, w) in workers.iter().enumerate() {
            if w.len() != n {
                return Err(Error::domain(format!(
                    "ragged vector set: worker {i} holds {} vectors, expected {n}",
                    w.len()
                )));
            }
            for v in w {
                if v.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.dim(),
                    });
                }
                data.extend_from_slice(v.as_slice());
            }
        }
        Ok(Self {
            workers: m,
            per_worker: n,
            dim: d,
            data,
        })
    }

    /// Builds a set from a worker-major flat buffer.
    pub fn from_flat(workers: usize, per_worker: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if workers == 0 || per_worker == 0 || dim == 0 {
            return Err(Error::domain("vector set must be non-empty"));
        }
        if data.len() != workers * per_worker * dim {
            return Err(Error::domain(format!(
                "flat buffer holds {} values, expected {}",
                data.len(),
                workers * per_worker * dim
            )));
        }
        crate::vector::check_finite(&data)?;
        Ok(Self {
            workers,
            per_worker,
            dim,
            data,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn per_worker(&self) -> usize {
        self.per_worker
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.workers * self.per_worker
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, worker: usize, index: usize) -> &[f64] {
        let start = (worker * self.per_worker + index) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Regroups the same vectors (in worker-major order) onto `workers`
    /// workers, dropping the tail that does not divide evenly.
    pub fn repartition(&self, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::domain("cannot partition onto zero workers"));
        }
        let per_worker = self.len() / workers;
        if per_worker == 0 {
            return Err(Error::domain(format!(
                "{} vectors cannot fill {workers} workers",
                self.len()
            )));
        }
        let keep = workers * per_worker * self.dim;
        Self::from_flat(workers, per_worker, self.dim, self.data[..keep].to_vec())
    }

    /// Arithmetic mean over all `m·n` vectors.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for chunk in self.data.chunks_exact(self.dim) {
            for (a, x) in mean.iter_mut().zip(chunk) {
                *a += x;
            }
        }
        let count = self.len() as f64;
        mean.iter_mut().for_each(|a| *a /= count);
        mean
    }

    /// `‖Σ_i Σ_j z_ij‖∞`.
    pub fn total_sum_inf_norm(&self) -> f64 {
        let mut sum = vec![0.0; self.dim];
        for chunk in self.data.chunks_exact(self.dim) {
            for (a, x) in sum.iter_mut().zip(chunk) {
                *a += x;
            }
        }
        crate::vector::inf_norm(&sum)
    }

    /// `max_ij ‖z_ij - z̄‖∞`.
    pub fn max_centered_inf_norm(&self) -> f64 {
        let mean = self.mean();
        self.data
            .chunks_exact(self.dim)
            .flat_map(|chunk| chunk.iter().zip(&mean).map(|(x, m)| (x - m).abs()))
            .fold(0.0, f64::max)
    }

    fn check_perms(&self, perms: &[Permutation]) -> Result<()> {
        if perms.len() != self.workers {
            return Err(Error::domain(format!(
                "expected {} permutations, got {}",
                self.workers,
                perms.len()
            )));
        }
        for (i, p) in perms.iter().enumerate() {
            if p.len() != self.per_worker {
                return Err(Error::domain(format!(
                    "permutation for worker {i} has length {}, expected {}",
                    p.len(),
                    self.per_worker
                )));
            }
        }
        Ok(())
    }
}

/// `max_k ‖Σ_{j≤k} Σ_i (z_{i,π_i(j)} - center)‖∞`, optionally with per-position
/// signs (`signs[i][j]` multiplies the `j`-th visited vector of worker `i`).
fn prefix_max(
    set: &VectorSet,
    perms: &[Permutation],
    signs: Option<&[Vec<Sign>]>,
    center: Option<&[f64]>,
) -> f64 {
    let d = set.dim;
    let mut acc = vec![0.0; d];
    let mut best = 0.0_f64;
    for j in 0..set.per_worker {
        for (i, perm) in perms.iter().enumerate() {
            let z = set.get(i, perm[j]);
            let s = signs.map_or(1.0, |s| s[i][j].value());
            match center {
                Some(c) => {
                    for k in 0..d {
                        acc[k] += s * (z[k] - c[k]);
                    }
                }
                None => {
                    for k in 0..d {
                        acc[k] += s * z[k];
                    }
                }
            }
        }
        best = best.max(crate::vector::inf_norm(&acc));
    }
    best
}

fn check_centralized(set: &VectorSet) -> Result<()> {
    if set.workers != 1 {
        return Err(Error::domain(format!(
            "centralized objective needs one worker, set has {}",
            set.workers
        )));
    }
    Ok(())
}

/// Centered prefix discrepancy of a single ordering.
pub fn herding_objective(set: &VectorSet, perm: &Permutation) -> Result<f64> {
    check_centralized(set)?;
    parallel_herding_bound(set, std::slice::from_ref(perm))
}

/// Centered prefix discrepancy with signs attached to positions of `perm`.
pub fn signed_herding_objective(set: &VectorSet, perm: &Permutation, signs: &[Sign]) -> Result<f64> {
    check_centralized(set)?;
    set.check_perms(std::slice::from_ref(perm))?;
    if signs.len() != set.per_worker {
        return Err(Error::domain(format!(
            "expected {} signs, got {}",
            set.per_worker,
            signs.len()
        )));
    }
    let mean = set.mean();
    let signs = [signs.to_vec()];
    Ok(prefix_max(
        set,
        std::slice::from_ref(perm),
        Some(&signs),
        Some(&mean),
    ))
}

/// Positive-signed items keep their order at the front; negative-signed items
/// follow in reverse order.
pub fn reorder(perm: &Permutation, signs: &[Sign]) -> Result<Permutation> {
    if signs.len() != perm.len() {
        return Err(Error::domain(format!(
            "expected {} signs, got {}",
            perm.len(),
            signs.len()
        )));
    }
    let mut front = Vec::with_capacity(perm.len());
    let mut back = Vec::new();
    for (&item, sign) in perm.as_slice().iter().zip(signs) {
        if sign.is_plus() {
            front.push(item);
        } else {
            back.push(item);
        }
    }
    front.extend(back.into_iter().rev());
    Permutation::new(front)
}

/// Centered parallel herding bound of `perms` over `set`.
pub fn parallel_herding_bound(set: &VectorSet, perms: &[Permutation]) -> Result<f64> {
    set.check_perms(perms)?;
    let mean = set.mean();
    Ok(prefix_max(set, perms, None, Some(&mean)))
}

/// Uncentered variant: `max_k ‖Σ_{j≤k} Σ_i z_{i,π_i(j)}‖∞`.
pub fn parallel_prefix_bound(set: &VectorSet, perms: &[Permutation]) -> Result<f64> {
    set.check_perms(perms)?;
    Ok(prefix_max(set, perms, None, None))
}

/// One pass of server-side pair balancing over a static set.
///
/// Pairs are taken at positions `(2k, 2k+1)` of each worker's current order,
/// processed with `k` ascending and worker ascending inside each `k`, all
/// against one shared running sum. The positively signed member of a pair goes
/// to the worker's front pointer, the other to its back pointer.
pub fn one_step_pair_balance_order(
    set: &VectorSet,
    perms: &[Permutation],
    engine: &mut SignEngine,
) -> Result<Vec<Permutation>> {
    set.check_perms(perms)?;
    let n = set.per_worker;
    if n % 2 != 0 {
        return Err(Error::domain(format!(
            "pair balancing needs an even number of vectors per worker, got {n}"
        )));
    }
    let m = set.workers;
    let mut state = BalanceState::new(set.dim);
    let mut out = vec![vec![0usize; n]; m];
    let mut front = vec![0usize; m];
    let mut back = vec![n; m];
    for k in 0..n / 2 {
        for i in 0..m {
            let first = perms[i][2 * k];
            let second = perms[i][2 * k + 1];
            let (s1, _) = pair_balance(&mut state, set.get(i, first), set.get(i, second), engine)?;
            let (to_front, to_back) = if s1.is_plus() {
                (first, second)
            } else {
                (second, first)
            };
            out[i][front[i]] = to_front;
            front[i] += 1;
            back[i] -= 1;
            out[i][back[i]] = to_back;
        }
    }
    out.into_iter().map(Permutation::new).collect()
}
