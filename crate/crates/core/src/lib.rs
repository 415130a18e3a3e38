//! Finite-horizon tabular policy evaluation with variance-optimal behavior
//! policies and baselines.
//!
//! The crate is organised bottom-up: [`mdp`] holds models, policies and
//! sampling; [`dp`] the exact backward recursions used as oracles;
//! [`estimators`] the per-trajectory estimators; [`theorems`] numeric checks
//! of the variance-gap decompositions; [`offline`] learns the behavior policy
//! and baseline from logged tuples; [`harness`] runs experiments.

pub mod dataset;
pub mod dp;
pub mod enumerate;
pub mod envs;
pub mod error;
pub mod harness;
pub mod estimators;
pub mod mdp;
pub mod offline;
pub mod rng;
pub mod tables;
pub mod theorems;

pub use error::{Error, Result};
pub use mdp::{FiniteMdp, TimedPolicy, Trajectory};
pub use rng::RngSpec;
pub use tables::{ActionTable, Dims, StateTable};
