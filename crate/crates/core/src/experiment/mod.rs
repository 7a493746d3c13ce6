//! Training and herding experiments, their configs, metrics files and the
//! rate-analysis helpers.

mod analysis;
mod bounds;
mod config;
mod herding_exp;
mod metrics;
mod run;

pub use analysis::{lambert_w0, pl_alpha, rate_fit, theoretical_lr, RateConstants, TheoreticalLr};
pub use bounds::{
    pair_balance_contraction_check, reorder_inequality_check, signed_prefix_check, TrialSummary,
};
pub use config::{
    DataSource, ExperimentConfig, HerdingConfig, LabelSpec, ObjectiveName, Overrides, RunConfig,
    TaskConfig, TransportMode, VectorsConfig,
};
pub use herding_exp::{herding_bound_experiment, herding_trajectory, run_herding_experiment};
pub use metrics::{
    fmt_f64, herding_summary, mean_std, read_metrics_csv, write_aggregate_csv, write_herding_aggregate,
    write_herding_csv, write_metrics_csv, EpochMetrics, ErrorMarker, HerdingRow, METRICS_HEADER,
};
pub use run::{
    prepare_seed, read_weights, run_experiment, run_worker, seed_csv_path, serve_experiment,
    weights_path, worker_session, ExperimentReport, SeedContext, SeedRun,
};
