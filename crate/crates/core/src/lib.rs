//! Two-timescale temporal-difference learning on finite MDPs.
//!
//! The crate provides exact closed-form oracles and the mini-batch stochastic
//! iterations for three algorithms that share one structure (a fast auxiliary
//! variable `w` tracking a slow parameter `θ` over Markovian samples):
//!
//! * [`linear_tdc`]: off-policy evaluation with linear features,
//! * [`nonlinear_tdc`]: on-policy evaluation with a smooth nonlinear value model,
//! * [`greedy_gq`]: control with a softmax policy over linear Q-features.
//!
//! [`mdp`] holds the MDP, policy, mixing and trajectory machinery and
//! [`analysis`] the variance probe, rate fits, tracking-recursion checks and
//! sample-complexity sweeps.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod greedy_gq;
pub mod linalg;
pub mod linear_tdc;
pub mod mdp;
pub mod nonlinear_tdc;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};

/// Library version recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
