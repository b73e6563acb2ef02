//! Stepsize, batch-size and horizon calculator for the linear iteration and the
//! closed-form error bound it certifies.

use serde::{Deserialize, Serialize};

use super::{w_of_theta, LinearTdcExact};
use crate::error::{Error, Result};
use crate::mdp::MixingEstimate;
use crate::schedule::{ResourceCap, RunInit, TwoTimescaleConfig};

/// Problem constants entering the linear convergence theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Constants {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho_max: f64,
    pub r_max: f64,
    pub r_theta: f64,
    pub kappa: f64,
    pub rho: f64,
}

impl Theorem1Constants {
    pub fn from_exact(exact: &LinearTdcExact, mixing: &MixingEstimate) -> Self {
        Self {
            lambda1: exact.lambda1,
            lambda2: exact.lambda2,
            rho_max: exact.rho_max,
            r_max: exact.r_max,
            r_theta: exact.r_theta,
            kappa: mixing.kappa,
            rho: mixing.rho,
        }
    }

    /// (1 + (κ−1)ρ)/(1−ρ).
    pub fn variance_factor(&self) -> f64 {
        (1.0 + (self.kappa - 1.0) * self.rho) / (1.0 - self.rho)
    }

    /// min{λ₁α, λ₂β}.
    pub fn rate(&self, alpha: f64, beta: f64) -> f64 {
        (self.lambda1 * alpha).min(self.lambda2 * beta)
    }
}

/// Largest admissible stepsizes: (α, β, individual α terms, individual β terms).
pub fn theorem1_stepsizes(c: &Theorem1Constants) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let (l1, l2, rm) = (c.lambda1, c.lambda2, c.rho_max);
    let beta_terms = vec![1.0 / (8.0 * l2), l2 / 4.0];
    let beta = beta_terms.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha_terms = vec![
        1.0 / (8.0 * l1),
        l1 * l2 / 12.0,
        (l2 * beta).sqrt() / (4.0 * 6f64.sqrt() * rm),
        l2 * l2.sqrt() * beta / (16.0 * rm * rm),
        l1 * l2 * beta / (64.0 * rm * rm),
        l1 * l2 * l2 * beta / 768.0,
    ];
    let alpha = alpha_terms.iter().copied().fold(f64::INFINITY, f64::min);
    (alpha, beta, alpha_terms, beta_terms)
}

/// The constant A₁ of the variance term A₁/M.
pub fn compute_a1(c: &Theorem1Constants, alpha: f64, beta: f64) -> f64 {
    let (l1, l2, rm) = (c.lambda1, c.lambda2, c.rho_max);
    let noise = 4.0 * c.r_theta * c.r_theta * rm * rm + c.r_max * c.r_max;
    let sum = 32.0 * alpha * alpha / (l2 * l2 * beta) + 2.0 * beta / l2 + 2.0 * beta * beta + 2.0 * alpha / l1 + 3.0 * alpha * alpha;
    256.0 * noise / c.rate(alpha, beta) * sum * c.variance_factor()
}

/// Right-hand side (1 − min{λ₁α, λ₂β}/8)^T Δ₀ + A₁/M of the final-error bound.
pub fn theorem1_bound(c: &Theorem1Constants, alpha: f64, beta: f64, batch: f64, iterations: usize, delta0: f64) -> f64 {
    (1.0 - c.rate(alpha, beta) / 8.0).powf(iterations as f64) * delta0 + compute_a1(c, alpha, beta) / batch
}

/// Calculator output: the schedule and every intermediate quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Plan {
    pub constants: Theorem1Constants,
    pub target_eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_terms: Vec<f64>,
    pub beta_terms: Vec<f64>,
    pub batch_lower_bound: f64,
    pub batch_for_accuracy: f64,
    /// max of the two batch requirements, rounded up.
    pub batch_size: f64,
    pub iterations: f64,
    pub a1: f64,
    pub delta0: f64,
    /// Predicted total samples T·M.
    pub samples: f64,
}

impl Theorem1Plan {
    pub fn to_config(&self, seed: u64, cap: &ResourceCap) -> Result<TwoTimescaleConfig> {
        cap.check(self.batch_size, self.iterations)?;
        TwoTimescaleConfig::new(self.alpha, self.beta, self.batch_size as usize, self.iterations as usize, seed)
    }
}

/// Schedule from raw constants and the initial Lyapunov value Δ₀.
pub fn theorem1_plan(c: &Theorem1Constants, delta0: f64, target_eps: f64, cap: &ResourceCap) -> Result<Theorem1Plan> {
    if !(target_eps > 0.0) {
        return Err(Error::InvalidConfig(format!("target accuracy {target_eps} must be positive")));
    }
    let (alpha, beta, alpha_terms, beta_terms) = theorem1_stepsizes(c);
    let (l1, l2, rm) = (c.lambda1, c.lambda2, c.rho_max);
    let batch_lower_bound = 128.0
        * (rm * rm + 1.0 / (l2 * l2))
        * c.variance_factor()
        * [1.0, (8.0 * beta + 8.0 * l2 * beta * beta) / (l1 * l2 * alpha), (8.0 + 12.0 * l1 * alpha) / l1]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
    let a1 = compute_a1(c, alpha, beta);
    let batch_for_accuracy = (2.0 * a1 / target_eps).ceil();
    let batch_size = batch_lower_bound.ceil().max(batch_for_accuracy);
    if !(batch_size <= cap.max_batch) {
        return Err(Error::ResourceCap(format!("batch size {batch_size:e} exceeds cap {:e}", cap.max_batch)));
    }
    let ratio = 2.0 * delta0 / target_eps;
    let iterations = if ratio > 1.0 { (8.0 / c.rate(alpha, beta) * ratio.ln()).ceil() } else { 0.0 };
    Ok(Theorem1Plan {
        constants: *c,
        target_eps,
        alpha,
        beta,
        alpha_terms,
        beta_terms,
        batch_lower_bound,
        batch_for_accuracy,
        batch_size,
        iterations,
        a1,
        delta0,
        samples: batch_size * iterations,
    })
}

/// Schedule for a concrete problem, with Δ₀ = ‖θ₀−θ*‖² + ‖w₀−w(θ₀)‖².
pub fn theorem1_config(
    exact: &LinearTdcExact,
    mixing: &MixingEstimate,
    target_eps: f64,
    init: &RunInit,
    cap: &ResourceCap,
) -> Result<Theorem1Plan> {
    let delta0 = (&init.theta - &exact.theta_star).norm_squared() + (&init.w - w_of_theta(exact, &init.theta)).norm_squared();
    theorem1_plan(&Theorem1Constants::from_exact(exact, mixing), delta0, target_eps, cap)
}

/// Coefficients of the one-step tracking recursion
/// x_{t+1} ≤ contraction·x_t + coupling·‖θ_t − θ*‖² + noise,
/// with x_t = E‖w_t − w(θ_t)‖².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingCoefficients {
    pub contraction: f64,
    pub coupling: f64,
    pub noise: f64,
}

pub fn linear_tracking_coefficients(c: &Theorem1Constants, alpha: f64, beta: f64, batch: usize) -> TrackingCoefficients {
    let (l1, l2, rm) = (c.lambda1, c.lambda2, c.rho_max);
    let a2 = alpha * alpha / (l2 * l2 * beta);
    TrackingCoefficients {
        contraction: 1.0 - l2 * beta / 4.0 + 16.0 * rm * rm * a2,
        coupling: 96.0 * a2 + l1 * alpha / 4.0,
        noise: 32.0
            * (4.0 * c.r_theta * c.r_theta * rm * rm + c.r_max * c.r_max)
            * (32.0 * a2 + 2.0 * beta / l2 + 2.0 * beta * beta)
            * c.variance_factor()
            / batch as f64,
    }
}
