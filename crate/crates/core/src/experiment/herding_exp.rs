use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use super::config::HerdingConfig;
use super::metrics::{write_herding_aggregate, write_herding_csv, HerdingRow};
use super::run::write_manifest;
use crate::coordinator::{OrderPolicy, PolicyRunner};
use crate::error::{Error, Result};
use crate::herding::{parallel_herding_bound, VectorSet};
use crate::tasks::generate_vectors;

/// Maps `f` over `items` on all available cores, keeping input order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                *slots[k].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

/// Splits `vectors` onto `m` workers with an even count per worker.
fn partition_even(vectors: &VectorSet, m: usize) -> Result<VectorSet> {
    let n = (vectors.len() / m) & !1;
    if n == 0 {
        return Err(Error::config(format!(
            "{} vectors cannot give {m} workers a pair each",
            vectors.len()
        )));
    }
    let d = vectors.dim();
    VectorSet::from_flat(m, n, d, vectors.as_flat()[..m * n * d].to_vec())
}

/// Replays a static vector set through `policy` for `epochs` epochs and
/// returns the parallel herding bound before the first epoch and after each.
pub fn herding_trajectory(
    set: &VectorSet,
    policy: OrderPolicy,
    engine: crate::balance::EngineKind,
    epochs: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    let (m, n, d) = (set.workers(), set.per_worker(), set.dim());
    let mut runner = PolicyRunner::new(policy, engine, m, n, d, seed)?;
    let mut bounds = vec![parallel_herding_bound(set, runner.permutations())?];
    for _ in 0..epochs {
        let perms = runner.permutations().to_vec();
        for j in 1..=n {
            let step: Vec<&[f64]> = (0..m).map(|i| set.get(i, perms[i][j - 1])).collect();
            runner.consume_step(j, &step)?;
        }
        let next = runner.finish_epoch()?;
        bounds.push(parallel_herding_bound(set, &next)?);
    }
    Ok(bounds)
}

/// Runs every `(seed, m, policy)` cell of the static-vector experiment.
pub fn herding_bound_experiment(config: &HerdingConfig) -> Result<Vec<HerdingRow>> {
    config.validate()?;
    let v = &config.vectors;
    let sets = parallel_map(&v.seeds, |&seed| generate_vectors(v.count, v.dim, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (k, &seed) in v.seeds.iter().enumerate() {
        for &m in &v.workers {
            for &policy in &v.policies {
                cells.push((k, seed, m, policy));
            }
        }
    }
    let results = parallel_map(&cells, |&(k, seed, m, policy)| -> Result<Vec<HerdingRow>> {
        let set = partition_even(&sets[k], m)?;
        let bounds = herding_trajectory(&set, policy, v.engine, v.epochs, seed)?;
        log::info!("herding: seed {seed}, m = {m}, {policy}: final bound {:.4}", bounds[bounds.len() - 1]);
        Ok(bounds
            .into_iter()
            .enumerate()
            .skip(1)
            .map(|(epoch, herding_bound)| HerdingRow {
                seed,
                epoch: epoch as u32,
                policy,
                m,
                herding_bound,
            })
            .collect::<Vec<_>>())
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Runs the experiment and writes `herding_bound.csv`,
/// `herding_aggregate.csv` and `manifest.json` under `vectors.out`.
pub fn run_herding_experiment(config: &HerdingConfig) -> Result<Vec<HerdingRow>> {
    let out = &config.vectors.out;
    fs::create_dir_all(out)?;
    let rows = herding_bound_experiment(config)?;
    write_herding_csv(&out.join("herding_bound.csv"), &rows)?;
    write_herding_aggregate(&out.join("herding_aggregate.csv"), &rows)?;
    let json = serde_json::to_value(config).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    write_manifest(out, "herding-bound", json, &config.vectors.seeds, "ok")?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::VectorsConfig;

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<u64> = (0..100).collect();
        assert_eq!(parallel_map(&xs, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn small_experiment_rows() {
        let config = HerdingConfig {
            vectors: VectorsConfig {
                count: 201,
                dim: 3,
                workers: vec![2, 4],
                epochs: 2,
                policies: vec![OrderPolicy::CdGrab, OrderPolicy::Drr],
                seeds: vec![0, 1],
                engine: Default::default(),
                out: "unused".into(),
            },
        };
        let rows = herding_bound_experiment(&config).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2 * 2);
        assert_eq!(rows, herding_bound_experiment(&config).unwrap());
        assert!(rows.iter().all(|r| r.herding_bound > 0.0));
    }
}
