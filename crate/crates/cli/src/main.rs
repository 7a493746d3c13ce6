use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use ordbal::balance::EngineKind;
use ordbal::coordinator::OrderPolicy;
use ordbal::experiment::{
    pair_balance_contraction_check, reorder_inequality_check, run_experiment, run_herding_experiment,
    run_worker, serve_experiment, signed_prefix_check, ExperimentConfig, ExperimentReport, HerdingConfig,
    Overrides, TransportMode,
};
use ordbal::Error;

#[derive(Parser)]
#[command(name = "ordbal", version, about = "Coordinated example ordering for distributed SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write per-seed and aggregate CSVs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the static-vector herding bound experiment.
    HerdingBound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the balancing and reordering bounds on random instances.
    BoundCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
    },
    /// Host the order server over TCP for remote workers.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        addr: String,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Join a server as one worker.
    Worker {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        addr: String,
        #[arg(long)]
        id: usize,
        /// Connection attempts before giving up.
        #[arg(long, default_value_t = 8)]
        attempts: u32,
        /// First retry delay in milliseconds; doubles up to 2 s.
        #[arg(long, default_value_t = 100)]
        backoff_ms: u64,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Parse and validate a training or herding config without running it.
    ValidateConfig { config: PathBuf },
}

#[derive(Args, Default)]
struct OverrideArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<OrderPolicy>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    /// greedy, randomized or thresholded:W
    #[arg(long)]
    engine: Option<EngineKind>,
    /// direct, memory or tcp:ADDR
    #[arg(long)]
    transport: Option<TransportMode>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            policy: self.policy,
            m: self.m,
            epochs: self.epochs,
            alpha: self.alpha,
            engine: self.engine,
            transport: self.transport.clone(),
        }
    }
}

fn resolve(path: &Path, overrides: &OverrideArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    config.apply(&overrides.to_overrides());
    println!("# resolved config\n{}", config.to_toml_string());
    config.validate()?;
    Ok(config)
}

fn summarize(report: &ExperimentReport) {
    for run in &report.runs {
        if let Some(last) = run.metrics.last() {
            println!(
                "seed {}: loss {:.6e} -> {:.6e} after {} epochs",
                run.seed, run.initial_loss, last.loss, last.epoch
            );
        }
    }
    println!("wrote {}", report.out_dir.display());
}

fn validate_config(path: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    match ExperimentConfig::from_toml_str(&text) {
        Ok(config) => {
            println!("# resolved config\n{}", config.to_toml_string());
            config.validate()?;
            println!("valid training config");
        }
        Err(train_err) => match HerdingConfig::from_toml_str(&text) {
            Ok(config) => {
                println!("# resolved config\n{}", config.to_toml_string());
                config.validate()?;
                println!("valid herding config");
            }
            Err(herding_err) if text.contains("[vectors]") => return Err(herding_err.into()),
            Err(_) => return Err(train_err.into()),
        },
    }
    Ok(())
}

fn bound_check(trials: usize, seed: u64, delta: f64) -> anyhow::Result<()> {
    let reorder = reorder_inequality_check(trials, seed)?;
    println!(
        "reorder inequality: {}/{} hold, worst lhs/rhs {:.4}",
        reorder.passed, reorder.trials, reorder.worst_ratio
    );
    let prefix = signed_prefix_check(trials, 1000, 16, delta, seed)?;
    println!(
        "signed prefix (N = 1000, d = 16): {}/{} within A = {:.4}, worst ratio {:.4}",
        prefix.passed,
        prefix.trials,
        prefix.bound.unwrap_or(f64::NAN),
        prefix.worst_ratio
    );
    let contraction = pair_balance_contraction_check(trials, delta, seed)?;
    println!(
        "pair-balance contraction: {}/{} hold, worst lhs/rhs {:.4}",
        contraction.passed, contraction.trials, contraction.worst_ratio
    );
    let need = 1.0 - delta;
    if reorder.passed != reorder.trials || prefix.pass_rate() < need || contraction.pass_rate() < need {
        bail!("bound check failed");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, overrides } => {
            let config = resolve(&config, &overrides)?;
            summarize(&run_experiment(&config)?);
        }
        Command::HerdingBound { config, out } => {
            let mut config = HerdingConfig::load(&config)?;
            if let Some(out) = out {
                config.vectors.out = out;
            }
            println!("# resolved config\n{}", config.to_toml_string());
            let rows = run_herding_experiment(&config)?;
            println!("{} rows written to {}", rows.len(), config.vectors.out.display());
        }
        Command::BoundCheck { trials, seed, delta } => bound_check(trials, seed, delta)?,
        Command::Serve { config, addr, overrides } => {
            let config = resolve(&config, &overrides)?;
            let listener = TcpListener::bind(&addr).map_err(Error::from)?;
            eprintln!("listening on {}", listener.local_addr().map_err(Error::from)?);
            summarize(&serve_experiment(&config, &listener)?);
        }
        Command::Worker {
            config,
            addr,
            id,
            attempts,
            backoff_ms,
            overrides,
        } => {
            let config = resolve(&config, &overrides)?;
            run_worker(&config, id, &addr, attempts, Duration::from_millis(backoff_ms))?;
        }
        Command::ValidateConfig { config } => validate_config(&config)?,
    }
    Ok(())
}

/// 2 for configuration problems, 4 for a refused handshake, 3 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Load { .. }) => 2,
        Some(Error::Handshake(_)) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ORDBAL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
