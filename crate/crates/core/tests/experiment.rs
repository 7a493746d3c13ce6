use std::path::Path;

use ordbal::coordinator::{OrderPolicy, PolicyRunner, WorkerState};
use ordbal::experiment::{
    herding_trajectory, prepare_seed, read_metrics_csv, read_weights, run_experiment, seed_csv_path,
    weights_path, ExperimentConfig,
};
use ordbal::herding::{parallel_herding_bound, VectorSet};
use ordbal::tasks::generate_vectors;
use ordbal::{Error, Permutation};

fn config(policy: &str, m: usize, epochs: u32, alpha: f64, noise: f64, extra: &str, out: &Path) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
[task]
objective = "least_squares"
examples = 512
dim = 6
noise = {noise}

[run]
policy = "{policy}"
m = {m}
epochs = {epochs}
alpha = {alpha:e}
seeds = [0, 1]
out = "{}"
{extra}
"#,
        out.display()
    ))
    .unwrap()
}

#[test]
fn zero_step_keeps_the_model() {
    let dir = tempfile::tempdir().unwrap();
    for policy in OrderPolicy::ALL {
        let report = run_experiment(&config(policy.name(), 1, 1, 0.0, 0.1, "", &dir.path().join(policy.name()))).unwrap();
        for run in &report.runs {
            assert_eq!(run.metrics.len(), 1);
            assert_eq!(run.metrics[0].loss, run.initial_loss, "{policy}");
            assert_eq!(run.metrics[0].delta_t, 0.0);
        }
    }
}

#[test]
fn noise_free_least_squares_converges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(&format!(
        "[task]\nexamples = 4096\ndim = 20\nnoise = 0.0\n[run]\npolicy = \"cdgrab\"\nm = 4\nepochs = 50\nalpha = 1e-3\nout = \"{}\"\n",
        dir.path().display()
    ))
    .unwrap();
    let report = run_experiment(&cfg).unwrap();
    let run = &report.runs[0];
    assert!(run.metrics[49].loss < 1e-3 * run.initial_loss, "{} vs {}", run.metrics[49].loss, run.initial_loss);
}

#[test]
fn reruns_and_transports_give_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "engine = \"randomized\"";
    let a = run_experiment(&config("cdgrab", 2, 3, 0.01, 0.1, extra, &dir.path().join("a"))).unwrap();
    let b = run_experiment(&config("cdgrab", 2, 3, 0.01, 0.1, extra, &dir.path().join("b"))).unwrap();
    let mut mem = config("cdgrab", 2, 3, 0.01, 0.1, extra, &dir.path().join("mem"));
    mem.run.transport = "memory".parse().unwrap();
    let c = run_experiment(&mem).unwrap();
    for seed in [0, 1] {
        let bytes = std::fs::read(seed_csv_path(&a.out_dir, seed)).unwrap();
        assert_eq!(bytes, std::fs::read(seed_csv_path(&b.out_dir, seed)).unwrap());
        assert_eq!(bytes, std::fs::read(seed_csv_path(&c.out_dir, seed)).unwrap());
    }
}

#[test]
fn persisted_weights_reproduce_the_last_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("drr", 4, 4, 0.02, 0.1, "", dir.path());
    let report = run_experiment(&cfg).unwrap();
    for run in &report.runs {
        let rows = read_metrics_csv(&seed_csv_path(dir.path(), run.seed)).unwrap();
        assert_eq!(rows, run.metrics);
        let w = read_weights(&weights_path(dir.path(), run.seed)).unwrap();
        assert_eq!(w, run.final_weights);
        let ctx = prepare_seed(&cfg, run.seed).unwrap();
        let loss = ctx.objective.mean_loss(&w, &ctx.all_examples).unwrap();
        assert_eq!(loss.to_bits(), rows.last().unwrap().loss.to_bits());
    }
}

/// Replays the training loop by hand and checks the logged loss and herding
/// bound against the herding module.
#[test]
fn harness_metrics_match_a_manual_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("cdgrab", 3, 2, 0.02, 0.1, "b = 2", dir.path());
    let report = run_experiment(&cfg).unwrap();
    let run = &report.runs[0];
    let ctx = prepare_seed(&cfg, 0).unwrap();
    let (m, n, d) = (3, ctx.units, ctx.objective.dim());
    let mut runner = PolicyRunner::new(OrderPolicy::CdGrab, cfg.run.engine, m, n, d, 0).unwrap();
    let mut workers: Vec<WorkerState> = (0..m)
        .map(|i| WorkerState::new(ctx.shards[i].clone(), 2, Permutation::identity(n), vec![0.0; d], 0.02).unwrap())
        .collect();
    for epoch in 0..2 {
        let mut logged = vec![vec![Vec::new(); n]; m];
        for (w, p) in workers.iter_mut().zip(runner.permutations()) {
            w.set_permutation(p.clone()).unwrap();
        }
        for j in 1..=n {
            let grads: Vec<_> = workers.iter().map(|w| w.compute_gradient(&ctx.objective, j).unwrap()).collect();
            for (i, g) in grads.iter().enumerate() {
                logged[i][workers[i].permutation()[j - 1]] = g.as_slice().to_vec();
            }
            let slices: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            let avg = runner.consume_step(j, &slices).unwrap();
            workers.iter_mut().for_each(|w| w.apply(&avg).unwrap());
        }
        let next = runner.finish_epoch().unwrap();
        let flat: Vec<f64> = logged.into_iter().flatten().flatten().collect();
        let set = VectorSet::from_flat(m, n, d, flat).unwrap();
        let row = &run.metrics[epoch];
        assert_eq!(row.herding_bound, Some(parallel_herding_bound(&set, &next).unwrap()));
        let loss = ctx.objective.mean_loss(workers[0].weights(), &ctx.all_examples).unwrap();
        assert_eq!(row.loss, loss);
    }
    assert_eq!(workers[0].weights(), run.final_weights.as_slice());
}

#[test]
fn balancing_failure_leaves_an_error_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("cdgrab", 2, 3, 0.01, 0.1, "engine = \"thresholded:1e-9\"", dir.path());
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, Error::BalanceFail { .. }), "{err}");
    let mut reader = csv::Reader::from_path(seed_csv_path(dir.path(), 0)).unwrap();
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let last = records.last().unwrap();
    let head: Vec<&str> = last.iter().take(4).collect();
    assert_eq!(head, ["0", "1", "cdgrab", "2"]);
    assert!(last[4].starts_with("error: balancing failed"), "{last:?}");
    assert!(last.iter().skip(5).all(str::is_empty));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"error: balancing failed"));
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut worst) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    worst
}

#[test]
fn drr_bound_is_stationary_across_epochs() {
    let trials = 300;
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for seed in 0..trials {
        let set = generate_vectors(400, 4, seed).unwrap().repartition(4).unwrap();
        let bounds = herding_trajectory(&set, OrderPolicy::Drr, Default::default(), 4, seed).unwrap();
        first.push(bounds[1]);
        last.push(bounds[4]);
    }
    let d = ks_statistic(&mut first, &mut last);
    // critical value at the 0.001 level
    let critical = 1.95 * (2.0 / trials as f64).sqrt();
    assert!(d < critical, "KS statistic {d} exceeds {critical}");
}
