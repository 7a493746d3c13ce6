use crate::balance::{pair_balance, BalanceState, EngineKind, Sign, SignEngine};
use crate::error::{Error, Result};
use crate::herding::reorder;
use crate::permutation::Permutation;
use crate::rng::RngStream;
use crate::vector::DenseVector;

/// Stream used by a balancing engine during `epoch`. Worker-local balancers
/// use their worker id; the shared order server uses worker 0.
pub(crate) fn engine_stream(seed: u64, epoch: u32, worker: usize) -> RngStream {
    RngStream::new(seed, u64::from(epoch), worker as u64, "balance")
}

/// Exact arithmetic mean, summed in worker order.
pub fn average(grads: &[&[f64]]) -> Result<DenseVector> {
    let first = grads
        .first()
        .ok_or_else(|| Error::protocol("no gradients to average"))?;
    let mut acc = vec![0.0; first.len()];
    for g in grads {
        if g.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                got: g.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(g.iter()) {
            *a += x;
        }
    }
    let m = grads.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    DenseVector::new(acc)
}

/// The CD-GraB order server.
///
/// Per epoch it averages the workers' step gradients, caches odd steps, and on
/// every even step pair-balances each worker's `(g_{j-1}, g_j)` against one
/// shared running sum, worker 0 first. At the end of the epoch each worker's
/// permutation is reordered by its sign buffer.
#[derive(Debug, Clone)]
pub struct ServerState {
    seed: u64,
    engine_kind: EngineKind,
    engine: SignEngine,
    epoch: u32,
    per_worker: usize,
    dim: usize,
    perms: Vec<Permutation>,
    running: BalanceState,
    signs: Vec<Vec<Sign>>,
    cache: Vec<Vec<f64>>,
    steps_done: usize,
}

impl ServerState {
    pub fn new(
        initial: Vec<Permutation>,
        dim: usize,
        engine_kind: EngineKind,
        seed: u64,
    ) -> Result<Self> {
        let per_worker = initial
            .first()
            .map(Permutation::len)
            .ok_or_else(|| Error::config("order server needs at least one worker"))?;
        if initial.iter().any(|p| p.len() != per_worker) {
            return Err(Error::config("workers must hold equally many examples"));
        }
        if per_worker == 0 || per_worker % 2 != 0 {
            return Err(Error::config(format!(
                "pair balancing needs an even, positive n, got {per_worker}"
            )));
        }
        let m = initial.len();
        Ok(Self {
            seed,
            engine_kind,
            engine: engine_kind.build(engine_stream(seed, 1, 0)),
            epoch: 1,
            per_worker,
            dim,
            perms: initial,
            running: BalanceState::new(dim),
            signs: vec![Vec::with_capacity(per_worker); m],
            cache: vec![Vec::new(); m],
            steps_done: 0,
        })
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn workers(&self) -> usize {
        self.perms.len()
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn running_sum(&self) -> &[f64] {
        self.running.sum()
    }

    /// Signs recorded so far this epoch, per worker, indexed by position.
    pub fn sign_buffer(&self) -> &[Vec<Sign>] {
        &self.signs
    }

    /// Consumes the `step`-th (1-based) gradients of `epoch` and returns their
    /// average.
    pub fn consume_step(&mut self, epoch: u32, step: usize, grads: &[&[f64]]) -> Result<DenseVector> {
        if epoch != self.epoch {
            return Err(Error::protocol(format!(
                "gradient for epoch {epoch} while the server is in epoch {}",
                self.epoch
            )));
        }
        if step != self.steps_done + 1 || step > self.per_worker {
            return Err(Error::protocol(format!(
                "expected step {} of {}, got {step}",
                self.steps_done + 1,
                self.per_worker
            )));
        }
        if grads.len() != self.workers() {
            return Err(Error::protocol(format!(
                "expected {} gradients, got {}",
                self.workers(),
                grads.len()
            )));
        }
        if let Some(g) = grads.iter().find(|g| g.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: g.len(),
            });
        }
        let avg = average(grads)?;
        if step % 2 == 1 {
            for (slot, g) in self.cache.iter_mut().zip(grads) {
                slot.clear();
                slot.extend_from_slice(g);
            }
        } else {
            for (i, g) in grads.iter().enumerate() {
                let (s_prev, s_cur) =
                    pair_balance(&mut self.running, &self.cache[i], g, &mut self.engine).inspect_err(
                        |e| log::error!("epoch {} step {step} worker {i}: {e}", self.epoch),
                    )?;
                self.signs[i].push(s_prev);
                self.signs[i].push(s_cur);
            }
        }
        self.steps_done = step;
        Ok(avg)
    }

    /// Reorders every worker's permutation by its sign buffer and resets the
    /// running sum, buffers and cache for the next epoch.
    pub fn finalize_epoch(&mut self) -> Result<Vec<Permutation>> {
        if self.steps_done != self.per_worker {
            return Err(Error::protocol(format!(
                "epoch {} finalized after {} of {} steps",
                self.epoch, self.steps_done, self.per_worker
            )));
        }
        let next = self
            .perms
            .iter()
            .zip(&self.signs)
            .map(|(p, s)| reorder(p, s))
            .collect::<Result<Vec<_>>>()?;
        self.perms = next.clone();
        self.epoch += 1;
        self.running.reset();
        self.signs.iter_mut().for_each(Vec::clear);
        self.cache.iter_mut().for_each(Vec::clear);
        self.steps_done = 0;
        self.engine = self
            .engine_kind
            .build(engine_stream(self.seed, self.epoch, 0));
        Ok(next)
    }
}

pub fn server_consume_step(
    state: &mut ServerState,
    epoch: u32,
    step: usize,
    grads: &[DenseVector],
) -> Result<DenseVector> {
    let slices: Vec<&[f64]> = grads.iter().map(DenseVector::as_slice).collect();
    state.consume_step(epoch, step, &slices)
}

pub fn server_finalize_epoch(state: &mut ServerState) -> Result<Vec<Permutation>> {
    state.finalize_epoch()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    fn server(m: usize, n: usize, dim: usize) -> ServerState {
        ServerState::new(vec![Permutation::identity(n); m], dim, EngineKind::Greedy, 0).unwrap()
    }

    #[test]
    fn odd_step_averages_and_caches() {
        let mut s = server(2, 2, 1);
        let avg = server_consume_step(&mut s, 1, 1, &[v(&[0.4]), v(&[-0.3])]).unwrap();
        assert!((avg[0] - 0.05).abs() < 1e-15);
        assert!(s.sign_buffer().iter().all(Vec::is_empty));
        assert_eq!(s.running_sum(), &[0.0]);
    }

    #[test]
    fn even_step_pair_balances_in_worker_order() {
        let mut s = server(2, 2, 1);
        server_consume_step(&mut s, 1, 1, &[v(&[0.4]), v(&[-0.3])]).unwrap();
        let avg = server_consume_step(&mut s, 1, 2, &[v(&[0.2]), v(&[0.5])]).unwrap();
        assert!((avg[0] - 0.35).abs() < 1e-15);
        // worker 0: c = 0.2 from h = 0 ties -> (-1, +1), h = -0.2
        assert_eq!(s.sign_buffer()[0], vec![Sign::Minus, Sign::Plus]);
        // worker 1: c = -0.8, |h + c| = 1.0 > |h - c| = 0.6 -> (-1, +1), h = 0.6
        assert_eq!(s.sign_buffer()[1], vec![Sign::Minus, Sign::Plus]);
        assert!((s.running_sum()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn single_worker_average_is_the_gradient() {
        let mut s = server(1, 2, 3);
        let g = v(&[0.1, -7.25, 3.0]);
        let avg = server_consume_step(&mut s, 1, 1, std::slice::from_ref(&g)).unwrap();
        assert_eq!(avg, g);
    }

    #[test]
    fn out_of_order_steps_rejected() {
        let mut s = server(1, 4, 1);
        assert!(matches!(
            server_consume_step(&mut s, 1, 2, &[v(&[1.0])]),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            server_consume_step(&mut s, 2, 1, &[v(&[1.0])]),
            Err(Error::Protocol(_))
        ));
        server_consume_step(&mut s, 1, 1, &[v(&[1.0])]).unwrap();
        assert!(server_consume_step(&mut s, 1, 1, &[v(&[1.0])]).is_err());
        assert!(matches!(server_finalize_epoch(&mut s), Err(Error::Protocol(_))));
    }

    #[test]
    fn wrong_dimension_rejected() {
        let mut s = server(1, 2, 2);
        assert!(matches!(
            server_consume_step(&mut s, 1, 1, &[v(&[1.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn odd_n_rejected() {
        assert!(ServerState::new(vec![Permutation::identity(3)], 1, EngineKind::Greedy, 0).is_err());
    }

    #[test]
    fn finalize_reorders_and_resets() {
        let mut s = server(1, 4, 1);
        // 1-d gradients 1, 2, 10, 3: pair diffs -1 then 7.
        // pair 1: h = 0 tie -> (-,+), h = 1; pair 2: |8| > |-6| -> (-,+)
        for (j, g) in [1.0, 2.0, 10.0, 3.0].into_iter().enumerate() {
            server_consume_step(&mut s, 1, j + 1, &[v(&[g])]).unwrap();
        }
        let next = server_finalize_epoch(&mut s).unwrap();
        // signs (-,+,-,+) on [0,1,2,3] -> front [1,3], back reversed [2,0]
        assert_eq!(next[0].as_slice(), &[1, 3, 2, 0]);
        assert_eq!(s.epoch(), 2);
        assert_eq!(s.running_sum(), &[0.0]);
        assert!(s.sign_buffer()[0].is_empty());
    }

    #[test]
    fn all_plus_keeps_permutation() {
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        assert_eq!(reorder(&p, &[Sign::Plus; 4]).unwrap(), p);
    }

    #[test]
    fn thresholded_failure_aborts_step() {
        let mut s = ServerState::new(
            vec![Permutation::identity(4)],
            1,
            EngineKind::Thresholded(0.5),
            3,
        )
        .unwrap();
        server_consume_step(&mut s, 1, 1, &[v(&[0.0])]).unwrap();
        server_consume_step(&mut s, 1, 2, &[v(&[0.4])]).unwrap();
        server_consume_step(&mut s, 1, 3, &[v(&[5.0])]).unwrap();
        // |h| = 0.4 and c = 5 gives |<h,c>| = 2 > 0.5
        assert!(matches!(
            server_consume_step(&mut s, 1, 4, &[v(&[0.0])]),
            Err(Error::BalanceFail { .. })
        ));
    }

    proptest! {
        #[test]
        fn epochs_yield_valid_permutations_and_antisymmetric_signs(
            m in 1usize..5,
            half in 1usize..8,
            d in 1usize..4,
            seed in any::<u64>(),
            randomized in any::<bool>(),
        ) {
            let n = 2 * half;
            let kind = if randomized { EngineKind::Randomized } else { EngineKind::Greedy };
            let mut stream = RngStream::new(seed, 0, 0, "prop");
            let init: Vec<_> = (0..m).map(|_| Permutation::random(n, &mut stream).unwrap()).collect();
            let mut s = ServerState::new(init, d, kind, seed).unwrap();
            for epoch in 1..=3u32 {
                for j in 1..=n {
                    let grads: Vec<DenseVector> = (0..m)
                        .map(|_| v(&(0..d).map(|_| stream.uniform(-1.0, 1.0)).collect::<Vec<_>>()))
                        .collect();
                    server_consume_step(&mut s, epoch, j, &grads).unwrap();
                }
                for buf in s.sign_buffer() {
                    prop_assert_eq!(buf.len(), n);
                    for pair in buf.chunks_exact(2) {
                        prop_assert_eq!(pair[0], pair[1].flip());
                    }
                }
                let next = server_finalize_epoch(&mut s).unwrap();
                for p in &next {
                    prop_assert!(crate::permutation::is_bijection(p.as_slice()));
                    prop_assert_eq!(p.len(), n);
                }
            }
        }
    }
}
