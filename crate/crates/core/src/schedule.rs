//! Step-size schedules, resource caps and per-iteration traces shared by the
//! three algorithms.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, OUTPUT_INDEX_STREAM};

/// Constant stepsizes, batch size and horizon of one two-timescale run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoTimescaleConfig {
    /// Slow (θ) stepsize.
    pub alpha: f64,
    /// Fast (w) stepsize.
    pub beta: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl TwoTimescaleConfig {
    pub fn new(alpha: f64, beta: f64, batch_size: usize, iterations: usize, seed: u64) -> Result<Self> {
        let cfg = Self { alpha, beta, batch_size, iterations, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks positivity and α ≤ β. Zero stepsizes are accepted so that the
    /// identity update can be exercised; negative ones are not.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("stepsizes must be finite and non-negative (α={}, β={})", self.alpha, self.beta)));
        }
        if self.alpha > self.beta {
            return Err(Error::InvalidConfig(format!("two-timescale ordering requires α ≤ β (α={}, β={})", self.alpha, self.beta)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_samples(&self) -> u128 {
        self.batch_size as u128 * self.iterations as u128
    }
}

/// Limits on what a calculator may ask a run to do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceCap {
    pub max_batch: f64,
    pub max_samples: f64,
}

impl Default for ResourceCap {
    fn default() -> Self {
        Self { max_batch: 1e9, max_samples: 1e10 }
    }
}

impl ResourceCap {
    pub fn unbounded() -> Self {
        Self { max_batch: f64::INFINITY, max_samples: f64::INFINITY }
    }

    pub fn check(&self, batch_size: f64, iterations: f64) -> Result<()> {
        if !(batch_size <= self.max_batch) {
            return Err(Error::ResourceCap(format!("batch size {batch_size:e} exceeds cap {:e}", self.max_batch)));
        }
        let samples = batch_size * iterations;
        if !(samples <= self.max_samples) {
            return Err(Error::ResourceCap(format!("{samples:e} samples exceed cap {:e}", self.max_samples)));
        }
        Ok(())
    }
}

/// Which algorithm produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    LinearTdc,
    NonlinearTdc,
    GreedyGq,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LinearTdc => "linear-tdc",
            Algorithm::NonlinearTdc => "nonlinear-tdc",
            Algorithm::GreedyGq => "greedy-gq",
        }
    }
}

/// Metrics of iterate t, evaluated with the exact oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub samples: u64,
    /// ‖θ_t − θ*‖²; only defined when the problem has a known optimum.
    pub theta_err_sq: Option<f64>,
    /// ‖w_t − w(θ_t)‖².
    pub tracking_err_sq: f64,
    /// J(θ_t).
    pub objective: f64,
    /// ‖∇J(θ_t)‖² (for Greedy-GQ, the stated gradient).
    pub grad_norm_sq: f64,
}

/// Diagnostic event raised during a run that did not abort it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub t: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub config: TwoTimescaleConfig,
    pub records: Vec<TraceRecord>,
    pub theta_final: DVector<f64>,
    pub w_final: DVector<f64>,
    /// Uniformly drawn output index in {1, …, T} (None when T = 0 or for linear TDC).
    pub output_index: Option<usize>,
    pub output_theta: Option<DVector<f64>>,
    pub events: Vec<RunEvent>,
}

impl RunTrace {
    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    /// Average of ‖∇J(θ_t)‖² over t = 1..=T: the expectation over the uniform
    /// output index given this trajectory.
    pub fn uniform_output_grad_norm_sq(&self) -> Option<f64> {
        let t = self.records.len().checked_sub(1).filter(|&t| t > 0)?;
        Some(self.records[1..].iter().map(|r| r.grad_norm_sq).sum::<f64>() / t as f64)
    }

    /// ‖∇J‖² at the drawn output index.
    pub fn output_grad_norm_sq(&self) -> Option<f64> {
        self.output_index.map(|i| self.records[i].grad_norm_sq)
    }
}

/// Initial iterates; zeros unless set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInit {
    pub theta: DVector<f64>,
    pub w: DVector<f64>,
}

impl RunInit {
    pub fn zeros(d: usize) -> Self {
        Self { theta: DVector::zeros(d), w: DVector::zeros(d) }
    }
}

/// Output index drawn uniformly from {1, …, T} on the run's index stream.
pub fn draw_output_index(seed: u64, iterations: usize) -> Option<usize> {
    if iterations == 0 {
        return None;
    }
    let mut rng = stream_rng(seed, OUTPUT_INDEX_STREAM);
    Some(rng.gen_range(1..=iterations))
}
