use serde::Serialize;

use crate::balance::{theoretical_bound_a, BalanceState, EngineKind, Sign};
use crate::error::Result;
use crate::herding::{
    herding_objective, one_step_pair_balance_order, parallel_prefix_bound, reorder,
    signed_herding_objective, VectorSet,
};
use crate::permutation::Permutation;
use crate::rng::RngStream;

/// Outcome of a batch of randomized bound checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub passed: usize,
    /// Largest `lhs / rhs` seen; at most 1 when every trial passed.
    pub worst_ratio: f64,
    /// The right-hand side constant where it is shared by all trials.
    pub bound: Option<f64>,
}

impl TrialSummary {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.trials.max(1) as f64
    }

    fn tally(trials: usize, pairs: impl IntoIterator<Item = (f64, f64)>, bound: Option<f64>) -> Self {
        let mut passed = 0;
        let mut worst_ratio = 0.0f64;
        for (lhs, rhs) in pairs {
            if lhs <= rhs {
                passed += 1;
            }
            let ratio = if rhs > 0.0 {
                lhs / rhs
            } else if lhs <= 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_ratio = worst_ratio.max(ratio);
        }
        Self {
            trials,
            passed,
            worst_ratio,
            bound,
        }
    }
}

/// A small integer-valued instance whose centered prefix sums are exact in
/// floating point: either `N` is a power of two or the vectors sum to zero.
fn integer_instance(stream: &mut RngStream) -> Result<(VectorSet, Permutation, Vec<Sign>)> {
    let d = 1 + stream.below(8) as usize;
    let power_of_two = stream.bernoulli(0.5);
    let n = if power_of_two {
        1usize << stream.below(7)
    } else {
        2 + stream.below(63) as usize
    };
    let mut data: Vec<f64> = (0..n * d).map(|_| stream.below(17) as f64 - 8.0).collect();
    if !power_of_two {
        for k in 0..d {
            let head: f64 = (0..n - 1).map(|j| data[j * d + k]).sum();
            data[(n - 1) * d + k] = -head;
        }
    }
    let set = VectorSet::from_flat(1, n, d, data)?;
    let perm = Permutation::random(n, stream)?;
    let signs = (0..n)
        .map(|_| if stream.bernoulli(0.5) { Sign::Plus } else { Sign::Minus })
        .collect();
    Ok((set, perm, signs))
}

/// Checks `herding(reorder(π, s)) ≤ ½·signed(π, s) + ½·herding(π)` on
/// fuzzed instances. Exact arithmetic, so the comparison has no slack.
pub fn reorder_inequality_check(trials: usize, seed: u64) -> Result<TrialSummary> {
    let mut pairs = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut stream = RngStream::new(seed, t as u64, 0, "reorder-check");
        let (set, perm, signs) = integer_instance(&mut stream)?;
        let lhs = herding_objective(&set, &reorder(&perm, &signs)?)?;
        let rhs = 0.5 * signed_herding_objective(&set, &perm, &signs)? + 0.5 * herding_objective(&set, &perm)?;
        pairs.push((lhs, rhs));
    }
    Ok(TrialSummary::tally(trials, pairs, None))
}

fn unit_vector(d: usize, stream: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| stream.normal()).collect();
        let norm = crate::vector::dot(&v, &v).sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Runs the randomized engine over `count` random unit vectors per trial and
/// compares the largest signed prefix inf-norm with `Ã(d, count, δ)`.
pub fn signed_prefix_check(trials: usize, count: usize, dim: usize, delta: f64, seed: u64) -> Result<TrialSummary> {
    let a = theoretical_bound_a(dim, count, delta)?;
    let pairs = super::herding_exp::parallel_map(&(0..trials).collect::<Vec<_>>(), |&t| -> Result<f64> {
        let mut vectors = RngStream::new(seed, t as u64, 0, "signed-prefix");
        let mut engine = EngineKind::Randomized.build(RngStream::new(seed, t as u64, 0, "signed-prefix-signs"));
        let mut state = BalanceState::new(dim);
        let mut worst = 0.0f64;
        for _ in 0..count {
            let c = unit_vector(dim, &mut vectors);
            engine.balance(&mut state, &c)?;
            worst = worst.max(crate::vector::inf_norm(state.sum()));
        }
        Ok(worst)
    });
    let lhs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TrialSummary::tally(trials, lhs.into_iter().map(|x| (x, a)), Some(a)))
}

/// One-step contraction of server pair balancing on random sets:
/// `post ≤ ½·pre + c1 + Ã·c2` with uncentered prefix bounds, `c1` the
/// inf-norm of the total sum and `c2` the largest centered inf-norm.
///
/// Each set is scaled so every pair difference has Euclidean norm at most 1,
/// the regime in which `Ã` bounds the signed sums.
pub fn pair_balance_contraction_check(trials: usize, delta: f64, seed: u64) -> Result<TrialSummary> {
    let mut pairs = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut stream = RngStream::new(seed, t as u64, 0, "pair-contraction");
        let m = 1 + stream.below(8) as usize;
        let n = 2 * (1 + stream.below(32) as usize);
        let d = 1 + stream.below(8) as usize;
        let offset: Vec<f64> = (0..d).map(|_| stream.uniform(-1.0, 1.0)).collect();
        let mut data: Vec<f64> = (0..m * n * d).map(|k| stream.normal() + offset[k % d]).collect();
        let perms = (0..m)
            .map(|_| Permutation::random(n, &mut stream))
            .collect::<Result<Vec<_>>>()?;
        let mut widest = 0.0f64;
        for (i, p) in perms.iter().enumerate() {
            for k in 0..n / 2 {
                let (a, b) = ((i * n + p[2 * k]) * d, (i * n + p[2 * k + 1]) * d);
                let sq: f64 = (0..d).map(|x| (data[a + x] - data[b + x]).powi(2)).sum();
                widest = widest.max(sq.sqrt());
            }
        }
        if widest > 0.0 {
            data.iter_mut().for_each(|x| *x /= widest);
        }
        let set = VectorSet::from_flat(m, n, d, data)?;
        let a = theoretical_bound_a(d, m * n / 2, delta)?;
        let c1 = set.total_sum_inf_norm();
        let c2 = set.max_centered_inf_norm();
        let mut engine = EngineKind::Randomized.build(RngStream::new(seed, t as u64, 0, "pair-contraction-signs"));
        let next = one_step_pair_balance_order(&set, &perms, &mut engine)?;
        let pre = parallel_prefix_bound(&set, &perms)?;
        let post = parallel_prefix_bound(&set, &next)?;
        pairs.push((post, 0.5 * pre + c1 + a * c2));
    }
    Ok(TrialSummary::tally(trials, pairs, None))
}
