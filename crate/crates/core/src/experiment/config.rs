use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::balance::EngineKind;
use crate::coordinator::OrderPolicy;
use crate::error::{Error, Result};
use crate::rng::tag_hash;
use crate::tasks::{LabelColumn, LoadOptions, ObjectiveKind};

/// Serde through `Display`/`FromStr`, so configs use the same spellings as
/// command-line flags.
mod as_string {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(value)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(de::Error::custom)
    }
}

mod as_strings {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(values: &[T], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| v.to_string()))
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|raw| raw.parse().map_err(de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TransportMode {
    /// Coordinator calls in one thread, no messages.
    #[default]
    Direct,
    /// One thread per worker over in-process channels.
    Memory,
    /// TCP on the given `host:port`.
    Tcp(String),
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportMode::Direct => f.write_str("direct"),
            TransportMode::Memory => f.write_str("memory"),
            TransportMode::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

impl FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "direct" => Ok(TransportMode::Direct),
            "memory" | "in-memory" | "in_memory" => Ok(TransportMode::Memory),
            other => match other.strip_prefix("tcp:") {
                Some(addr) if !addr.is_empty() => Ok(TransportMode::Tcp(addr.to_string())),
                _ => Err(Error::config(format!(
                    "unknown transport `{other}` (expected direct, memory or tcp:HOST:PORT)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    #[default]
    LeastSquares,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

/// A label column given as a 0-based index or a header name; `"last"` picks
/// the final column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSpec {
    Index(usize),
    Name(String),
}

impl Default for LabelSpec {
    fn default() -> Self {
        LabelSpec::Name("last".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default)]
    pub objective: ObjectiveName,
    /// L2 penalty for the logistic objective.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub source: DataSource,
    /// Synthetic: number of examples.
    #[serde(default)]
    pub examples: Option<usize>,
    /// Synthetic: feature dimension.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Synthetic: label noise scale.
    #[serde(default)]
    pub noise: f64,
    /// Synthetic: fixed data seed. When absent each run seed draws its own
    /// dataset.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub label_column: LabelSpec,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub label_map: Option<BTreeMap<String, f64>>,
}

impl TaskConfig {
    pub fn objective_kind(&self) -> ObjectiveKind {
        match self.objective {
            ObjectiveName::LeastSquares => ObjectiveKind::LeastSquares,
            ObjectiveName::Logistic => ObjectiveKind::Logistic {
                lambda: self.lambda,
            },
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            label_column: match &self.label_column {
                LabelSpec::Index(i) => LabelColumn::Index(*i),
                LabelSpec::Name(n) if n == "last" => LabelColumn::Last,
                LabelSpec::Name(n) => LabelColumn::Name(n.clone()),
            },
            standardize: self.standardize,
            label_map: self.label_map.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("task.lambda must be >= 0, got {}", self.lambda)));
        }
        match self.source {
            DataSource::Synthetic => {
                match self.examples {
                    Some(n) if n >= 1 => {}
                    _ => return Err(Error::config("task.examples must be set and >= 1 for synthetic data")),
                }
                match self.dim {
                    Some(d) if d >= 1 => {}
                    _ => return Err(Error::config("task.dim must be set and >= 1 for synthetic data")),
                }
                if !(self.noise >= 0.0 && self.noise.is_finite()) {
                    return Err(Error::config(format!("task.noise must be >= 0, got {}", self.noise)));
                }
            }
            DataSource::Csv => {
                if self.path.is_none() {
                    return Err(Error::config("task.path is required when task.source = \"csv\""));
                }
            }
        }
        Ok(())
    }
}

fn default_block() -> usize {
    1
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(with = "as_string")]
    pub policy: OrderPolicy,
    pub m: usize,
    #[serde(default = "default_block")]
    pub b: usize,
    pub epochs: u32,
    pub alpha: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, with = "as_string")]
    pub engine: EngineKind,
    #[serde(default, with = "as_string")]
    pub transport: TransportMode,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Declares a single-machine setting; forces `m = 1`.
    #[serde(default)]
    pub centralized: bool,
    #[serde(default = "default_true")]
    pub herding_metric: bool,
    /// Record elapsed wall time; off keeps CSVs byte-reproducible.
    #[serde(default)]
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub run: RunConfig,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub policy: Option<OrderPolicy>,
    pub m: Option<usize>,
    pub epochs: Option<u32>,
    pub alpha: Option<f64>,
    pub engine: Option<EngineKind>,
    pub transport: Option<TransportMode>,
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::config(format!("{origin}: {e}")))
}

fn read_config_file(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text, "config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_toml(&read_config_file(path)?, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        let run = &mut self.run;
        if let Some(v) = &o.out {
            run.out = v.clone();
        }
        if let Some(v) = o.seed {
            run.seeds = vec![v];
        }
        if let Some(v) = o.policy {
            run.policy = v;
        }
        if let Some(v) = o.m {
            run.m = v;
        }
        if let Some(v) = o.epochs {
            run.epochs = v;
        }
        if let Some(v) = o.alpha {
            run.alpha = v;
        }
        if let Some(v) = o.engine {
            run.engine = v;
        }
        if let Some(v) = &o.transport {
            run.transport = v.clone();
        }
    }

    /// Checks everything that can be checked without touching data files.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        let run = &self.run;
        if run.m == 0 {
            return Err(Error::config("run.m must be >= 1"));
        }
        if run.centralized && run.m != 1 {
            return Err(Error::config(format!(
                "run.centralized = true requires run.m = 1, got run.m = {} (policy {})",
                run.m, run.policy
            )));
        }
        if run.policy.is_centralized() && run.m != 1 {
            return Err(Error::config(format!(
                "run.policy = {} is centralized and requires run.m = 1, got run.m = {}",
                run.policy, run.m
            )));
        }
        if run.b == 0 {
            return Err(Error::config("run.b must be >= 1"));
        }
        if run.epochs == 0 {
            return Err(Error::config("run.epochs must be >= 1"));
        }
        if !(run.alpha >= 0.0 && run.alpha.is_finite()) {
            return Err(Error::config(format!("run.alpha must be finite and >= 0, got {}", run.alpha)));
        }
        if run.alpha == 0.0 {
            log::warn!("run.alpha = 0: the model will not move");
        }
        if run.seeds.is_empty() {
            return Err(Error::config("run.seeds must list at least one seed"));
        }
        let mut seen = run.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != run.seeds.len() {
            return Err(Error::config("run.seeds contains duplicates"));
        }
        if let EngineKind::Thresholded(w) = run.engine {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config(format!("thresholded engine needs w > 0, got {w}")));
            }
        }
        if let Some(n) = self.task.examples {
            let unit = run.m * run.b * if run.policy.needs_pairs() { 2 } else { 1 };
            if self.task.source == DataSource::Synthetic && n < unit {
                return Err(Error::config(format!(
                    "task.examples = {n} is too small for run.m = {} and run.b = {} under policy {}",
                    run.m, run.b, run.policy
                )));
            }
        }
        Ok(())
    }

    /// Fingerprint of everything that affects the computation for `seed`;
    /// exchanged in the handshake. Output path and transport are excluded.
    pub fn session_hash(&self, seed: u64) -> u64 {
        let run = &self.run;
        let key = serde_json::json!({
            "task": self.task,
            "policy": run.policy.name(),
            "m": run.m,
            "b": run.b,
            "epochs": run.epochs,
            "alpha": run.alpha.to_bits(),
            "engine": run.engine.to_string(),
            "seed": seed,
        });
        tag_hash(&key.to_string())
    }
}

/// Static-vector herding-bound experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorsConfig {
    pub count: usize,
    pub dim: usize,
    pub workers: Vec<usize>,
    pub epochs: u32,
    #[serde(with = "as_strings")]
    pub policies: Vec<OrderPolicy>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, with = "as_string")]
    pub engine: EngineKind,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HerdingConfig {
    pub vectors: VectorsConfig,
}

impl HerdingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text, "config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_toml(&read_config_file(path)?, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.vectors;
        if v.dim == 0 {
            return Err(Error::config("vectors.dim must be >= 1"));
        }
        if v.epochs == 0 {
            return Err(Error::config("vectors.epochs must be >= 1"));
        }
        if v.workers.is_empty() || v.policies.is_empty() || v.seeds.is_empty() {
            return Err(Error::config(
                "vectors.workers, vectors.policies and vectors.seeds must be nonempty",
            ));
        }
        for &m in &v.workers {
            for &p in &v.policies {
                p.check_workers(m)
                    .map_err(|e| Error::config(format!("vectors.workers/vectors.policies: {e}")))?;
            }
            if v.count / m.max(1) < 2 {
                return Err(Error::config(format!(
                    "vectors.count = {} leaves fewer than 2 vectors per worker for m = {m}",
                    v.count
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[task]
objective = "least_squares"
examples = 64
dim = 3

[run]
policy = "cdgrab"
m = 2
epochs = 2
alpha = 0.05
"#;

    #[test]
    fn minimal_config_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.run.b, 1);
        assert_eq!(c.run.seeds, vec![0]);
        assert_eq!(c.run.engine, EngineKind::Greedy);
        assert_eq!(c.run.transport, TransportMode::Direct);
        assert!(c.run.herding_metric);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str(&MINIMAL.replace("alpha", "alhpa")).is_err());
        let err = ExperimentConfig::from_toml_str(&MINIMAL.replace("cdgrab", "fastest"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("drr"), "{err}");
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.run.alpha = -1.0;
        assert!(c.validate().is_err());
        c.run.alpha = 0.1;
        c.run.epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn centralized_conflicts_name_keys() {
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.run.policy = OrderPolicy::CentralizedGrab;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("run.policy") && err.contains("run.m"), "{err}");
        c.run.policy = OrderPolicy::CdGrab;
        c.run.centralized = true;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("run.centralized") && err.contains("run.m"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            m: Some(4),
            engine: Some("thresholded:2.5".parse().unwrap()),
            transport: Some("tcp:127.0.0.1:9000".parse().unwrap()),
            ..Default::default()
        });
        assert_eq!(c.run.seeds, vec![9]);
        assert_eq!(c.run.m, 4);
        assert_eq!(c.run.engine, EngineKind::Thresholded(2.5));
        assert_eq!(c.run.transport, TransportMode::Tcp("127.0.0.1:9000".into()));
    }

    #[test]
    fn session_hash_ignores_output_location() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.run.out = "elsewhere".into();
        b.run.transport = TransportMode::Memory;
        assert_eq!(a.session_hash(1), b.session_hash(1));
        assert_ne!(a.session_hash(1), a.session_hash(2));
        b.run.alpha = 0.06;
        assert_ne!(a.session_hash(1), b.session_hash(1));
    }

    #[test]
    fn herding_config_parses() {
        let c = HerdingConfig::from_toml_str(
            r#"
[vectors]
count = 1000
dim = 4
workers = [2]
epochs = 1
policies = ["drr", "cdgrab"]
"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.vectors.policies, vec![OrderPolicy::Drr, OrderPolicy::CdGrab]);
        let bad = HerdingConfig::from_toml_str(
            "[vectors]\ncount = 10\ndim = 1\nworkers = [2]\nepochs = 1\npolicies = [\"best\"]\n",
        );
        assert!(bad.unwrap_err().to_string().contains("valid policies"));
    }
}
