use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::config::{DataSource, ExperimentConfig, ObjectiveName, TransportMode};
use super::metrics::{write_aggregate_csv, write_metrics_csv, EpochMetrics, ErrorMarker};
use crate::coordinator::{DriftTracker, PolicyRunner, WorkerState};
use crate::error::{Error, Result};
use crate::herding::{parallel_herding_bound, VectorSet};
use crate::permutation::Permutation;
use crate::rng::RngStream;
use crate::tasks::{generate_synthetic, load_csv, shard_examples, Objective, Shard, SyntheticKind};
use crate::transport::{
    accept_links, connect_with_retry, memory_pair, Control, Link, ServerEndpoint, SessionSpec,
    WorkerEndpoint,
};
use crate::vector::{dot, DenseVector};

/// Everything a seed needs that both server and workers derive identically
/// from the config.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub objective: Objective,
    pub shards: Vec<Shard>,
    /// Permutation units (blocks) per worker.
    pub units: usize,
    /// Every example of the dataset, for full-data metrics.
    pub all_examples: Vec<usize>,
}

pub fn prepare_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let task = &config.task;
    let run = &config.run;
    let data = match task.source {
        DataSource::Synthetic => {
            let kind = match task.objective {
                ObjectiveName::LeastSquares => SyntheticKind::Regression,
                ObjectiveName::Logistic => SyntheticKind::Classification,
            };
            generate_synthetic(
                kind,
                task.examples.unwrap_or(0),
                task.dim.unwrap_or(0),
                task.data_seed.unwrap_or(seed),
                task.noise,
            )?
        }
        DataSource::Csv => {
            let path = task
                .path
                .as_ref()
                .ok_or_else(|| Error::config("task.path is required"))?;
            load_csv(path, &task.load_options())?
        }
    };
    let objective = Objective::new(task.objective_kind(), Arc::new(data))?;
    let total = objective.dataset().len();
    let mut stream = RngStream::new(seed, 0, 0, "shard");
    let shards = shard_examples(total, run.m, run.b, &mut stream)?;
    let units = shards[0].len() / run.b;
    if run.policy.needs_pairs() && units % 2 != 0 {
        return Err(Error::config(format!(
            "policy {} needs an even number of blocks per worker, got {units}",
            run.policy
        )));
    }
    Ok(SeedContext {
        seed,
        objective,
        shards,
        units,
        all_examples: (0..total).collect(),
    })
}

/// The finished run of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub initial_loss: f64,
    pub metrics: Vec<EpochMetrics>,
    pub final_weights: Vec<f64>,
    /// Per-worker orders used in epochs `1..=T`, then the order produced for
    /// epoch `T + 1`.
    pub orders: Vec<Vec<Permutation>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub runs: Vec<SeedRun>,
}

/// How the server reaches its workers.
trait Exchange {
    fn start_epoch(&mut self, epoch: u32, perms: &[Permutation]) -> Result<()>;
    fn gather(&mut self, epoch: u32, step: usize) -> Result<Vec<DenseVector>>;
    fn broadcast(&mut self, epoch: u32, step: usize, avg: &DenseVector, server_w: &[f64]) -> Result<()>;
    fn finish(&mut self) -> Result<()>;
}

/// Workers held in-process and stepped directly.
struct DirectExchange<'a> {
    objective: &'a Objective,
    workers: Vec<WorkerState>,
}

impl Exchange for DirectExchange<'_> {
    fn start_epoch(&mut self, _epoch: u32, perms: &[Permutation]) -> Result<()> {
        for (w, p) in self.workers.iter_mut().zip(perms) {
            w.set_permutation(p.clone())?;
        }
        Ok(())
    }

    fn gather(&mut self, _epoch: u32, step: usize) -> Result<Vec<DenseVector>> {
        self.workers
            .iter()
            .map(|w| w.compute_gradient(self.objective, step))
            .collect()
    }

    fn broadcast(&mut self, epoch: u32, step: usize, avg: &DenseVector, server_w: &[f64]) -> Result<()> {
        for w in &mut self.workers {
            w.apply(avg)?;
            if w.weights() != server_w {
                return Err(Error::protocol(format!(
                    "replicated model diverged on worker {} at epoch {epoch}, step {step}",
                    w.worker_id()
                )));
            }
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

struct LinkExchange<L: Link> {
    endpoint: ServerEndpoint<L>,
}

impl<L: Link> Exchange for LinkExchange<L> {
    fn start_epoch(&mut self, epoch: u32, perms: &[Permutation]) -> Result<()> {
        self.endpoint.send_permutations(epoch, perms)
    }

    fn gather(&mut self, epoch: u32, step: usize) -> Result<Vec<DenseVector>> {
        self.endpoint.gather(epoch, step as u32)
    }

    fn broadcast(&mut self, epoch: u32, step: usize, avg: &DenseVector, _server_w: &[f64]) -> Result<()> {
        self.endpoint.broadcast_avg(epoch, step as u32, avg)
    }

    fn finish(&mut self) -> Result<()> {
        self.endpoint.finish()
    }
}

fn new_worker(config: &ExperimentConfig, ctx: &SeedContext, worker: usize) -> Result<WorkerState> {
    WorkerState::new(
        ctx.shards[worker].clone(),
        config.run.b,
        Permutation::identity(ctx.units),
        vec![0.0; ctx.objective.dim()],
        config.run.alpha,
    )
}

fn full_metrics(ctx: &SeedContext, w: &[f64]) -> Result<(f64, f64)> {
    let loss = ctx.objective.mean_loss(w, &ctx.all_examples)?;
    let grad = ctx.objective.mean_grad(w, &ctx.all_examples)?;
    Ok((loss, dot(grad.as_slice(), grad.as_slice())))
}

/// The order server's epoch loop. Rows are pushed as epochs complete so that
/// a failure leaves the finished epochs in `rows`.
fn drive<E: Exchange>(
    config: &ExperimentConfig,
    ctx: &SeedContext,
    exchange: &mut E,
    rows: &mut Vec<EpochMetrics>,
) -> Result<Trained> {
    let run = &config.run;
    let d = ctx.objective.dim();
    let n = ctx.units;
    let m = run.m;
    let mut runner = PolicyRunner::new(run.policy, run.engine, m, n, d, ctx.seed)?;
    let mut w = vec![0.0; d];
    let started = Instant::now();
    let mut collected = if run.herding_metric {
        vec![0.0; m * n * d]
    } else {
        Vec::new()
    };
    let mut orders = Vec::new();
    for epoch in 1..=run.epochs {
        let perms = runner.permutations().to_vec();
        exchange.start_epoch(epoch, &perms)?;
        orders.push(perms.clone());
        let mut drift = DriftTracker::new(&w);
        for j in 1..=n {
            let grads = exchange.gather(epoch, j)?;
            if run.herding_metric {
                for (i, g) in grads.iter().enumerate() {
                    let at = (i * n + perms[i][j - 1]) * d;
                    collected[at..at + d].copy_from_slice(g.as_slice());
                }
            }
            let slices: Vec<&[f64]> = grads.iter().map(DenseVector::as_slice).collect();
            let avg = runner.consume_step(j, &slices)?;
            for (wk, g) in w.iter_mut().zip(avg.as_slice()) {
                *wk -= run.alpha * g;
            }
            crate::vector::check_finite(&w)?;
            exchange.broadcast(epoch, j, &avg, &w)?;
            drift.observe(&w);
        }
        let next = runner.finish_epoch()?;
        let herding_bound = if run.herding_metric {
            let set = VectorSet::from_flat(m, n, d, collected.clone())?;
            Some(parallel_herding_bound(&set, &next)?)
        } else {
            None
        };
        let (loss, grad_norm_sq) = full_metrics(ctx, &w)?;
        rows.push(EpochMetrics {
            seed: ctx.seed,
            epoch,
            policy: run.policy,
            m,
            loss,
            grad_norm_sq,
            herding_bound,
            delta_t: drift.value(),
            wall_ms: if run.wall_clock {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        log::info!(
            "seed {} epoch {epoch}/{}: loss {loss:.6e}, |grad|^2 {grad_norm_sq:.3e}",
            ctx.seed,
            run.epochs
        );
    }
    exchange.finish()?;
    orders.push(runner.permutations().to_vec());
    Ok(Trained { weights: w, orders })
}

/// Server-side result of one seed.
struct Trained {
    weights: Vec<f64>,
    orders: Vec<Vec<Permutation>>,
}

fn session_spec(config: &ExperimentConfig, ctx: &SeedContext) -> SessionSpec {
    SessionSpec {
        workers: config.run.m,
        n: ctx.units as u32,
        d: ctx.objective.dim() as u32,
        config_hash: config.session_hash(ctx.seed),
    }
}

/// A worker's side of one seed's session. Returns its final weights.
pub fn worker_session<L: Link>(
    config: &ExperimentConfig,
    ctx: &SeedContext,
    worker: usize,
    link: L,
) -> Result<Vec<f64>> {
    let mut state = new_worker(config, ctx, worker)?;
    let spec = session_spec(config, ctx);
    let mut ep = WorkerEndpoint::hello(link, worker as u16, spec.n, spec.d, spec.config_hash)?;
    loop {
        match ep.recv_control()? {
            Control::Epoch(epoch, perm) => {
                state.set_permutation(perm)?;
                for j in 1..=ctx.units {
                    let g = state.compute_gradient(&ctx.objective, j)?;
                    ep.send_grad(epoch, j as u32, &g)?;
                    let avg = ep.recv_avg(epoch, j as u32)?;
                    state.apply(&avg)?;
                }
            }
            Control::Done => return Ok(state.weights().to_vec()),
        }
    }
}

fn serve_links<L: Link>(
    config: &ExperimentConfig,
    ctx: &SeedContext,
    links: Vec<L>,
    rows: &mut Vec<EpochMetrics>,
) -> Result<Trained> {
    let endpoint = ServerEndpoint::handshake(links, session_spec(config, ctx))?;
    drive(config, ctx, &mut LinkExchange { endpoint }, rows)
}

/// Joins the worker threads and checks every replica against the server.
fn join_workers(
    served: Result<Trained>,
    handles: Vec<thread::ScopedJoinHandle<'_, Result<Vec<f64>>>>,
) -> Result<Trained> {
    let workers: Vec<Result<Vec<f64>>> = handles
        .into_iter()
        .map(|h| h.join().unwrap_or_else(|_| Err(Error::protocol("worker thread panicked"))))
        .collect();
    let trained = served?;
    for (i, r) in workers.into_iter().enumerate() {
        if r? != trained.weights {
            return Err(Error::protocol(format!(
                "worker {i} finished with weights different from the server replica"
            )));
        }
    }
    Ok(trained)
}

fn run_seed_memory(config: &ExperimentConfig, ctx: &SeedContext, rows: &mut Vec<EpochMetrics>) -> Result<Trained> {
    thread::scope(|scope| {
        let mut server_links = Vec::new();
        let mut handles = Vec::new();
        for i in 0..config.run.m {
            let (server_side, worker_side) = memory_pair();
            server_links.push(server_side);
            handles.push(scope.spawn(move || worker_session(config, ctx, i, worker_side)));
        }
        let served = serve_links(config, ctx, server_links, rows);
        join_workers(served, handles)
    })
}

fn run_seed_tcp_local(
    config: &ExperimentConfig,
    ctx: &SeedContext,
    listener: &TcpListener,
    rows: &mut Vec<EpochMetrics>,
) -> Result<Trained> {
    let addr = listener.local_addr()?.to_string();
    thread::scope(|scope| {
        let handles: Vec<_> = (0..config.run.m)
            .map(|i| {
                let addr = addr.clone();
                scope.spawn(move || {
                    let link = connect_with_retry(&addr, 20, Duration::from_millis(10))?;
                    worker_session(config, ctx, i, link)
                })
            })
            .collect();
        let served = accept_links(listener, config.run.m).and_then(|links| serve_links(config, ctx, links, rows));
        join_workers(served, handles)
    })
}

fn run_seed_direct(config: &ExperimentConfig, ctx: &SeedContext, rows: &mut Vec<EpochMetrics>) -> Result<Trained> {
    let workers = (0..config.run.m)
        .map(|i| new_worker(config, ctx, i))
        .collect::<Result<Vec<_>>>()?;
    let mut exchange = DirectExchange {
        objective: &ctx.objective,
        workers,
    };
    drive(config, ctx, &mut exchange, rows)
}

/// Git revision of the working directory, when available.
fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

#[derive(Serialize)]
struct StreamDoc {
    purpose: &'static str,
    seed: &'static str,
    epoch: &'static str,
    worker: &'static str,
}

/// Documents how every random stream of a run is keyed.
fn rng_manifest() -> serde_json::Value {
    let streams = [
        StreamDoc { purpose: "synthetic", seed: "task.data_seed or run seed", epoch: "0", worker: "0" },
        StreamDoc { purpose: "shard", seed: "run seed", epoch: "0", worker: "0" },
        StreamDoc { purpose: "init", seed: "run seed", epoch: "1", worker: "i" },
        StreamDoc { purpose: "balance", seed: "run seed", epoch: "t", worker: "i (0 on the order server)" },
        StreamDoc { purpose: "drr", seed: "run seed", epoch: "t >= 2", worker: "i" },
    ];
    serde_json::json!({
        "generator": "splitmix64",
        "increment": "0x9e3779b97f4a7c15",
        "finalizer": ["z ^= z >> 30; z *= 0xbf58476d1ce4e5b9", "z ^= z >> 27; z *= 0x94d049bb133111eb", "z ^= z >> 31"],
        "purpose_hash": "fnv1a-64",
        "key_schedule": "s = mix(seed + inc); for x in [epoch, worker, hash(purpose)]: s = mix((s + inc) ^ x)",
        "streams": streams,
    })
}

pub(crate) fn write_manifest(out: &Path, kind: &str, config: serde_json::Value, seeds: &[u64], status: &str) -> Result<()> {
    let manifest = serde_json::json!({
        "tool": "ordbal",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": kind,
        "git_revision": git_revision(),
        "config": config,
        "seeds": seeds,
        "rng": rng_manifest(),
        "status": status,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn write_weights(path: &Path, w: &[f64]) -> Result<()> {
    let text = serde_json::to_string(w).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Loads weights written by a run.
pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

pub fn seed_csv_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}.csv"))
}

pub fn weights_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("weights_seed_{seed}.json"))
}

/// Runs every seed through `run_one`, writing per-seed CSVs and weights, the
/// aggregate and the manifest. The first failure is flushed with an error
/// marker row and returned.
fn run_seeds<F>(config: &ExperimentConfig, mut run_one: F) -> Result<ExperimentReport>
where
    F: FnMut(&SeedContext, &mut Vec<EpochMetrics>) -> Result<Trained>,
{
    let out = config.run.out.clone();
    fs::create_dir_all(&out)?;
    let config_json = serde_json::to_value(config).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let mut runs = Vec::new();
    for &seed in &config.run.seeds {
        let mut rows = Vec::new();
        let result = prepare_seed(config, seed).and_then(|ctx| {
            let initial = full_metrics(&ctx, &vec![0.0; ctx.objective.dim()])?.0;
            run_one(&ctx, &mut rows).map(|w| (initial, w))
        });
        match result {
            Ok((initial_loss, trained)) => {
                write_metrics_csv(&seed_csv_path(&out, seed), &rows, None)?;
                write_weights(&weights_path(&out, seed), &trained.weights)?;
                runs.push(SeedRun {
                    seed,
                    initial_loss,
                    metrics: rows,
                    final_weights: trained.weights,
                    orders: trained.orders,
                });
            }
            Err(e) => {
                let marker = ErrorMarker {
                    seed,
                    epoch: rows.len() as u32 + 1,
                    policy: config.run.policy,
                    m: config.run.m,
                    message: e.to_string(),
                };
                write_metrics_csv(&seed_csv_path(&out, seed), &rows, Some(&marker))?;
                let done: Vec<Vec<EpochMetrics>> = runs.iter().map(|r: &SeedRun| r.metrics.clone()).collect();
                if !done.is_empty() {
                    write_aggregate_csv(&out.join("aggregate.csv"), &done)?;
                }
                write_manifest(&out, "train", config_json, &config.run.seeds, &format!("error: {e}"))?;
                return Err(e);
            }
        }
    }
    let all: Vec<Vec<EpochMetrics>> = runs.iter().map(|r| r.metrics.clone()).collect();
    write_aggregate_csv(&out.join("aggregate.csv"), &all)?;
    write_manifest(&out, "train", config_json, &config.run.seeds, "ok")?;
    Ok(ExperimentReport { out_dir: out, runs })
}

/// Trains every seed of `config` over its configured transport. With
/// `tcp:ADDR` the server listens on ADDR and the workers run as local threads.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    match &config.run.transport {
        TransportMode::Direct => run_seeds(config, |ctx, rows| run_seed_direct(config, ctx, rows)),
        TransportMode::Memory => run_seeds(config, |ctx, rows| run_seed_memory(config, ctx, rows)),
        TransportMode::Tcp(addr) => {
            let listener = TcpListener::bind(addr.as_str())?;
            run_seeds(config, |ctx, rows| run_seed_tcp_local(config, ctx, &listener, rows))
        }
    }
}

/// Order-server process: waits on `listener` for `m` remote workers per seed.
pub fn serve_experiment(config: &ExperimentConfig, listener: &TcpListener) -> Result<ExperimentReport> {
    config.validate()?;
    run_seeds(config, |ctx, rows| {
        let links = accept_links(listener, config.run.m)?;
        serve_links(config, ctx, links, rows)
    })
}

/// Worker process: joins the server at `addr` once per seed.
pub fn run_worker(
    config: &ExperimentConfig,
    worker: usize,
    addr: &str,
    attempts: u32,
    backoff: Duration,
) -> Result<()> {
    config.validate()?;
    if worker >= config.run.m {
        return Err(Error::config(format!(
            "worker id {worker} out of range for run.m = {}",
            config.run.m
        )));
    }
    for &seed in &config.run.seeds {
        let ctx = prepare_seed(config, seed)?;
        let link = connect_with_retry(addr, attempts, backoff)?;
        worker_session(config, &ctx, worker, link)?;
        log::info!("worker {worker}: seed {seed} done");
    }
    Ok(())
}
