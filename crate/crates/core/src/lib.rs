//! Coordinated distributed example ordering for SGD.
//!
//! The crate provides the sign-generation engines, herding objectives and
//! reorder step, the order-server and worker state machines together with
//! baseline ordering policies, a message layer (in-memory and TCP), training
//! objectives and an experiment harness that writes CSV metrics.

pub mod balance;
pub mod coordinator;
pub mod error;
pub mod experiment;
pub mod herding;
pub mod permutation;
pub mod rng;
pub mod tasks;
pub mod transport;
pub mod vector;

pub use error::{Error, Result};
pub use permutation::Permutation;
pub use rng::RngStream;
pub use vector::DenseVector;
