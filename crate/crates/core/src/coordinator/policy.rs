use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::server::{average, engine_stream, ServerState};
use super::worker::StaleMeanState;
use crate::balance::{pair_balance, BalanceState, EngineKind, Sign, SignEngine};
use crate::error::{Error, Result};
use crate::herding::reorder;
use crate::permutation::Permutation;
use crate::rng::RngStream;
use crate::vector::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderPolicy {
    /// Coordinated pair balancing on the order server.
    #[serde(rename = "cdgrab")]
    CdGrab,
    /// Independent reshuffle per worker per epoch.
    #[serde(rename = "drr")]
    Drr,
    /// Each worker balances its own stale-mean-centered gradients.
    #[serde(rename = "id_grab_bal")]
    IdGrabBal,
    /// Each worker pair-balances its own gradients.
    #[serde(rename = "id_grab_pairbal")]
    IdGrabPairBal,
    #[serde(rename = "centralized_grab")]
    CentralizedGrab,
    #[serde(rename = "centralized_pair_balance")]
    CentralizedPairBalance,
    /// The epoch-1 shuffle, reused forever.
    #[serde(rename = "shuffle_once")]
    ShuffleOnce,
}

impl OrderPolicy {
    pub const ALL: [OrderPolicy; 7] = [
        OrderPolicy::CdGrab,
        OrderPolicy::Drr,
        OrderPolicy::IdGrabBal,
        OrderPolicy::IdGrabPairBal,
        OrderPolicy::CentralizedGrab,
        OrderPolicy::CentralizedPairBalance,
        OrderPolicy::ShuffleOnce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OrderPolicy::CdGrab => "cdgrab",
            OrderPolicy::Drr => "drr",
            OrderPolicy::IdGrabBal => "id_grab_bal",
            OrderPolicy::IdGrabPairBal => "id_grab_pairbal",
            OrderPolicy::CentralizedGrab => "centralized_grab",
            OrderPolicy::CentralizedPairBalance => "centralized_pair_balance",
            OrderPolicy::ShuffleOnce => "shuffle_once",
        }
    }

    pub fn is_centralized(self) -> bool {
        matches!(
            self,
            OrderPolicy::CentralizedGrab | OrderPolicy::CentralizedPairBalance
        )
    }

    /// Whether the policy balances adjacent pairs and so needs an even `n`.
    pub fn needs_pairs(self) -> bool {
        matches!(
            self,
            OrderPolicy::CdGrab | OrderPolicy::IdGrabPairBal | OrderPolicy::CentralizedPairBalance
        )
    }

    pub fn uses_engine(self) -> bool {
        !matches!(self, OrderPolicy::Drr | OrderPolicy::ShuffleOnce)
    }

    pub fn check_workers(self, workers: usize) -> Result<()> {
        if workers == 0 {
            return Err(Error::config("m must be at least 1"));
        }
        if self.is_centralized() && workers != 1 {
            return Err(Error::config(format!(
                "policy `{self}` is centralized and requires m = 1, got m = {workers}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for OrderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        OrderPolicy::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = OrderPolicy::ALL.iter().map(|p| p.name()).collect();
                Error::config(format!(
                    "unknown policy `{s}`; valid policies: {}",
                    names.join(", ")
                ))
            })
    }
}

fn initial_permutations(seed: u64, workers: usize, n: usize) -> Result<Vec<Permutation>> {
    (0..workers)
        .map(|i| Permutation::random(n, &mut RngStream::new(seed, 1, i as u64, "init")))
        .collect()
}

/// Worker-local balancer used by the independent and centralized variants.
#[derive(Debug, Clone)]
struct LocalOrder {
    running: BalanceState,
    engine: SignEngine,
    signs: Vec<Sign>,
    cache: Vec<f64>,
    stale: Option<StaleMeanState>,
    centered: Vec<f64>,
}

impl LocalOrder {
    fn new(dim: usize, engine: SignEngine, stale: bool) -> Self {
        Self {
            running: BalanceState::new(dim),
            engine,
            signs: Vec::new(),
            cache: Vec::new(),
            stale: stale.then(|| StaleMeanState::new(dim)),
            centered: Vec::with_capacity(dim),
        }
    }

    fn consume(&mut self, step: usize, g: &[f64]) -> Result<()> {
        match &mut self.stale {
            Some(stale) => {
                stale.center_and_accumulate(g, &mut self.centered);
                let s = self.engine.balance(&mut self.running, &self.centered)?;
                self.signs.push(s);
            }
            None if step % 2 == 1 => {
                self.cache.clear();
                self.cache.extend_from_slice(g);
            }
            None => {
                let (a, b) = pair_balance(&mut self.running, &self.cache, g, &mut self.engine)?;
                self.signs.push(a);
                self.signs.push(b);
            }
        }
        Ok(())
    }

    fn finish(&mut self, perm: &Permutation, engine: SignEngine) -> Result<Permutation> {
        let next = reorder(perm, &self.signs)?;
        self.running.reset();
        self.signs.clear();
        self.cache.clear();
        if let Some(stale) = &mut self.stale {
            stale.roll();
        }
        self.engine = engine;
        Ok(next)
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Server(Box<ServerState>),
    Local(Vec<LocalOrder>),
    Random,
}

/// Drives any [`OrderPolicy`] one step at a time.
///
/// Each step receives the m workers' gradients in worker order and returns
/// their average; after `n` steps, [`PolicyRunner::finish_epoch`] yields the
/// next epoch's permutations.
#[derive(Debug, Clone)]
pub struct PolicyRunner {
    policy: OrderPolicy,
    engine_kind: EngineKind,
    seed: u64,
    dim: usize,
    per_worker: usize,
    epoch: u32,
    steps_done: usize,
    perms: Vec<Permutation>,
    inner: Inner,
}

impl PolicyRunner {
    pub fn new(
        policy: OrderPolicy,
        engine_kind: EngineKind,
        workers: usize,
        per_worker: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        policy.check_workers(workers)?;
        if per_worker == 0 || dim == 0 {
            return Err(Error::config("n and d must be positive"));
        }
        if policy.needs_pairs() && per_worker % 2 != 0 {
            return Err(Error::config(format!(
                "policy `{policy}` pairs examples and needs an even n, got {per_worker}"
            )));
        }
        let perms = initial_permutations(seed, workers, per_worker)?;
        let local = |stale: bool| {
            Inner::Local(
                (0..workers)
                    .map(|i| LocalOrder::new(dim, engine_kind.build(engine_stream(seed, 1, i)), stale))
                    .collect(),
            )
        };
        let inner = match policy {
            OrderPolicy::CdGrab => Inner::Server(Box::new(ServerState::new(
                perms.clone(),
                dim,
                engine_kind,
                seed,
            )?)),
            OrderPolicy::IdGrabBal | OrderPolicy::CentralizedGrab => local(true),
            OrderPolicy::IdGrabPairBal | OrderPolicy::CentralizedPairBalance => local(false),
            OrderPolicy::Drr | OrderPolicy::ShuffleOnce => Inner::Random,
        };
        Ok(Self {
            policy,
            engine_kind,
            seed,
            dim,
            per_worker,
            epoch: 1,
            steps_done: 0,
            perms,
            inner,
        })
    }

    pub fn policy(&self) -> OrderPolicy {
        self.policy
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn workers(&self) -> usize {
        self.perms.len()
    }

    pub fn per_worker(&self) -> usize {
        self.per_worker
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Permutations in force for the current epoch.
    pub fn permutations(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn consume_step(&mut self, step: usize, grads: &[&[f64]]) -> Result<DenseVector> {
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
        let avg = match &mut self.inner {
            Inner::Server(server) => server.consume_step(self.epoch, step, grads)?,
            Inner::Local(locals) => {
                for (local, g) in locals.iter_mut().zip(grads) {
                    local.consume(step, g)?;
                }
                average(grads)?
            }
            Inner::Random => average(grads)?,
        };
        self.steps_done = step;
        Ok(avg)
    }

    /// Closes the epoch and returns the permutations for the next one.
    pub fn finish_epoch(&mut self) -> Result<Vec<Permutation>> {
        if self.steps_done != self.per_worker {
            return Err(Error::protocol(format!(
                "epoch {} finished after {} of {} steps",
                self.epoch, self.steps_done, self.per_worker
            )));
        }
        let next_epoch = self.epoch + 1;
        let next = match &mut self.inner {
            Inner::Server(server) => server.finalize_epoch()?,
            Inner::Local(locals) => locals
                .iter_mut()
                .zip(&self.perms)
                .enumerate()
                .map(|(i, (local, perm))| {
                    let engine = self
                        .engine_kind
                        .build(engine_stream(self.seed, next_epoch, i));
                    local.finish(perm, engine)
                })
                .collect::<Result<Vec<_>>>()?,
            Inner::Random => match self.policy {
                OrderPolicy::Drr => (0..self.workers())
                    .map(|i| {
                        let mut stream =
                            RngStream::new(self.seed, u64::from(next_epoch), i as u64, "drr");
                        Permutation::random(self.per_worker, &mut stream)
                    })
                    .collect::<Result<Vec<_>>>()?,
                _ => self.perms.clone(),
            },
        };
        self.perms = next.clone();
        self.epoch = next_epoch;
        self.steps_done = 0;
        Ok(next)
    }
}

/// Next-epoch permutations for `runner` after feeding it a full epoch.
pub fn policy_next_epoch(runner: &mut PolicyRunner) -> Result<Vec<Permutation>> {
    runner.finish_epoch()
}
