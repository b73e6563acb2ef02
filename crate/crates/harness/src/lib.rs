//! Experiment harness: JSON configs in, per-seed trace CSVs and JSON
//! summaries out.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use error::{HarnessError, Result};
