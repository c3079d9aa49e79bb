//! Federated in-client regularized multi-objective actor-critic on tabular
//! multi-objective MDPs.
//!
//! Each client runs a mini-batch TD critic and a softmax actor, resolves its
//! `M` per-objective policy gradients locally with a regularized MGDA
//! quadratic program, and only the policy parameters are averaged by the
//! server. An exact dynamic-programming oracle makes Pareto stationarity,
//! weight disagreement and client drift measurable.

pub mod actor;
pub mod config;
pub mod critic;
pub mod env;
pub mod error;
pub mod experiments;
pub mod federation;
pub mod linalg;
pub mod metrics;
pub mod mgda;
pub mod oracle;
pub mod report;

pub use error::{FirmError, Result};
