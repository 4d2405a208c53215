//! PAC-Bayesian actor-critic toolkit.
//!
//! Bootstrapped critic ensembles trained on a PAC-Bayes objective, a
//! shared-trunk multi-head soft actor, desk-scale sparse and delayed reward
//! environments, a BootDQN-P baseline and exact finite-MDP checks of the
//! identities the objective rests on.
//!
//! Batch workloads (seed sweeps, randomized oracle sweeps, gradient-check
//! sweeps) fan out through [`par`], which uses rayon when the `parallel`
//! feature is enabled and a plain sequential loop otherwise. Individual
//! training runs are single-threaded.

pub mod actor;
pub mod agent;
pub mod analysis;
pub mod critic;
pub mod envs;
mod error;
pub mod numerics;
pub mod oracle;
pub mod par;
pub mod replay;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
