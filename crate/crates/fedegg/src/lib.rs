//! Deterministic federated-learning simulator with a server-side guiding
//! task. Clients run local SGD variants on non-IID shards; when the gate
//! condition on the log loss ratio opens, the server takes extra descent
//! steps on a small guiding dataset before publishing the round's model.
//!
//! Everything is reproducible from a single master seed: per-client and
//! per-round RNG streams are derived by hashing, so results do not depend
//! on thread count or scheduling.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod guidance;
pub mod numerics;
pub mod objectives;
pub mod schedule;
pub mod strategies;
pub mod theory;

pub use error::{Error, Result};
