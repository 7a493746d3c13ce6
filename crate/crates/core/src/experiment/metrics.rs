use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coordinator::OrderPolicy;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "seed",
    "epoch",
    "policy",
    "m",
    "loss",
    "grad_norm_sq",
    "herding_bound",
    "delta_t",
    "wall_ms",
];

/// Metrics recorded at the end of epoch `epoch` with the model frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub seed: u64,
    pub epoch: u32,
    pub policy: OrderPolicy,
    pub m: usize,
    /// Mean loss over the whole training set.
    pub loss: f64,
    /// `‖∇f(w)‖₂²` of the full-data gradient.
    pub grad_norm_sq: f64,
    /// Centered parallel herding bound of this epoch's gradients under the
    /// permutations chosen for the next epoch.
    pub herding_bound: Option<f64>,
    pub delta_t: f64,
    pub wall_ms: u64,
}

/// Seventeen significant digits: every `f64` round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl EpochMetrics {
    fn record(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.epoch.to_string(),
            self.policy.to_string(),
            self.m.to_string(),
            fmt_f64(self.loss),
            fmt_f64(self.grad_norm_sq),
            self.herding_bound.map(fmt_f64).unwrap_or_default(),
            fmt_f64(self.delta_t),
            self.wall_ms.to_string(),
        ]
    }
}

/// An aborted run: where it stopped and why.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMarker {
    pub seed: u64,
    pub epoch: u32,
    pub policy: OrderPolicy,
    pub m: usize,
    pub message: String,
}

/// Writes one seed's rows; an abort appends a marker row whose `loss` cell
/// reads `error: <message>` and whose other metric cells are empty.
pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics], error: Option<&ErrorMarker>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.record()).map_err(csv_err)?;
    }
    if let Some(e) = error {
        let message = format!("error: {}", e.message.replace(['\n', '\r'], " "));
        w.write_record([
            e.seed.to_string(),
            e.epoch.to_string(),
            e.policy.to_string(),
            e.m.to_string(),
            message,
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV back. Error marker rows are skipped.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.get(4).is_some_and(|c| c.starts_with("error")) {
            continue;
        }
        let bad = |what: &str| Error::config(format!("{}: malformed {what} in metrics row", path.display()));
        let num = |i: usize, what: &str| -> Result<f64> {
            rec.get(i).and_then(|c| c.parse().ok()).ok_or_else(|| bad(what))
        };
        out.push(EpochMetrics {
            seed: rec.get(0).and_then(|c| c.parse().ok()).ok_or_else(|| bad("seed"))?,
            epoch: rec.get(1).and_then(|c| c.parse().ok()).ok_or_else(|| bad("epoch"))?,
            policy: rec.get(2).ok_or_else(|| bad("policy"))?.parse()?,
            m: rec.get(3).and_then(|c| c.parse().ok()).ok_or_else(|| bad("m"))?,
            loss: num(4, "loss")?,
            grad_norm_sq: num(5, "grad_norm_sq")?,
            herding_bound: match rec.get(6) {
                Some("") | None => None,
                Some(_) => Some(num(6, "herding_bound")?),
            },
            delta_t: num(7, "delta_t")?,
            wall_ms: rec.get(8).and_then(|c| c.parse().ok()).ok_or_else(|| bad("wall_ms"))?,
        });
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k;
    (mean, var.sqrt())
}

/// Per-epoch mean and population std across seeds. Epochs that not every
/// seed reached are omitted.
pub fn write_aggregate_csv(path: &Path, runs: &[Vec<EpochMetrics>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "epoch",
        "policy",
        "m",
        "seeds",
        "loss_mean",
        "loss_std",
        "grad_norm_sq_mean",
        "grad_norm_sq_std",
        "herding_bound_mean",
        "herding_bound_std",
        "delta_t_mean",
        "delta_t_std",
    ])
    .map_err(csv_err)?;
    let mut by_epoch: BTreeMap<u32, Vec<&EpochMetrics>> = BTreeMap::new();
    for row in runs.iter().flatten() {
        by_epoch.entry(row.epoch).or_default().push(row);
    }
    for (epoch, rows) in by_epoch {
        if rows.len() != runs.len() {
            continue;
        }
        let col = |f: &dyn Fn(&EpochMetrics) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (lm, ls) = col(&|r| r.loss);
        let (gm, gs) = col(&|r| r.grad_norm_sq);
        let herding: Vec<f64> = rows.iter().filter_map(|r| r.herding_bound).collect();
        let (hm, hs) = if herding.len() == rows.len() {
            let (a, b) = mean_std(&herding);
            (fmt_f64(a), fmt_f64(b))
        } else {
            (String::new(), String::new())
        };
        let (dm, ds) = col(&|r| r.delta_t);
        w.write_record([
            epoch.to_string(),
            rows[0].policy.to_string(),
            rows[0].m.to_string(),
            rows.len().to_string(),
            fmt_f64(lm),
            fmt_f64(ls),
            fmt_f64(gm),
            fmt_f64(gs),
            hm,
            hs,
            fmt_f64(dm),
            fmt_f64(ds),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the static-vector herding experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HerdingRow {
    pub seed: u64,
    /// Bound of the order produced by epoch `epoch`.
    pub epoch: u32,
    pub policy: OrderPolicy,
    pub m: usize,
    pub herding_bound: f64,
}

pub fn write_herding_csv(path: &Path, rows: &[HerdingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["seed", "epoch", "policy", "m", "herding_bound"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.epoch.to_string(),
            r.policy.to_string(),
            r.m.to_string(),
            fmt_f64(r.herding_bound),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and population std over seeds for each `(policy, m, epoch)`.
pub fn herding_summary(rows: &[HerdingRow]) -> Vec<(OrderPolicy, usize, u32, usize, f64, f64)> {
    let mut cells: BTreeMap<(usize, usize, u32), (OrderPolicy, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let key = (OrderPolicy::ALL.iter().position(|p| *p == r.policy).unwrap_or(0), r.m, r.epoch);
        cells.entry(key).or_insert_with(|| (r.policy, Vec::new())).1.push(r.herding_bound);
    }
    cells
        .into_iter()
        .map(|((_, m, epoch), (policy, xs))| {
            let (mean, std) = mean_std(&xs);
            (policy, m, epoch, xs.len(), mean, std)
        })
        .collect()
}

pub fn write_herding_aggregate(path: &Path, rows: &[HerdingRow]) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "policy,m,epoch,seeds,herding_bound_mean,herding_bound_std")?;
    for (policy, m, epoch, count, mean, std) in herding_summary(rows) {
        writeln!(f, "{policy},{m},{epoch},{count},{},{}", fmt_f64(mean), fmt_f64(std))?;
    }
    Ok(())
}
