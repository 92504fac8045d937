//! Resource-adaptive asynchronous federated learning, simulated.
//!
//! The global model is split into fragments ([`model`]); heterogeneous
//! clients are handed fragments by an online greedy rule that respects a
//! delay bound ([`scheduler`]); a deterministic discrete-event loop trains
//! and merges them asynchronously ([`sim`]). [`data`] provides datasets and
//! [`config`]/[`experiment`] drive runs, sweeps and ablations.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod model;
pub mod scheduler;
pub mod sim;

pub use error::{FedError, Result};
pub use exec::Execution;
