//! Offline reinforcement learning for MDPs whose state splits into an
//! exogenous part that actions barely influence and an endogenous part
//! that they drive directly.
//!
//! The crate provides the benchmark environments, fitted-Q learners that
//! replay recorded exogenous trajectories, the matching policy-evaluation
//! estimator and error bounds, exact dynamic-programming oracles, and the
//! experiment harness behind the `air-rl` command-line tool.

pub mod algos;
pub mod approx;
pub mod collect;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod eval;
pub mod harness;
pub mod models;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use types::{AirSpec, Dataset, DatasetMeta, Endo, EndoKind, Episode, FactoredState, Step};
