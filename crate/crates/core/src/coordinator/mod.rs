//! Order-server and worker state machines and the baseline ordering policies.

mod policy;
mod server;
mod worker;

pub use policy::{policy_next_epoch, OrderPolicy, PolicyRunner};
pub use server::{average, server_consume_step, server_finalize_epoch, ServerState};
pub use worker::{delta_t, worker_step, StaleMeanState, WorkerState};
pub(crate) use worker::DriftTracker;
