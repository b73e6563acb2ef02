//! Probe-based problem constants and the configuration calculator for Greedy-GQ.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{softmax_policy, GreedyGqProblem, RatioGuard};
use crate::error::{Error, Result};
use crate::linalg::sym_min_eigenvalue;
use crate::mdp::MixingEstimate;
use crate::nonlinear_tdc::theta_probe_grid;
use crate::schedule::{ResourceCap, RunInit, TwoTimescaleConfig};

/// Safety factor applied to the probe estimate of L_J.
pub const LIPSCHITZ_SAFETY: f64 = 2.0;
/// Probe ball radius in units of R_θ.
pub const PROBE_RADIUS_FACTOR: f64 = 10.0;

/// Problem constants estimated on a probe grid in the ball of radius 10R_θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GqConstants {
    /// 1 / min_θ λ_min(A_θᵀSigma⁻¹A_θ): the constant with ‖θ − θ*_θ‖ ≤ λ₁‖∇J(θ)‖.
    pub lambda1: f64,
    /// 1 / max_θ λ_min(A_θᵀSigma⁻¹A_θ): the signed reading of the stated definition.
    pub lambda1_literal: f64,
    pub lambda2: f64,
    pub rho_max: f64,
    /// Largest difference quotient of the stated gradient, times the safety factor.
    pub l_j: f64,
    pub r_theta: f64,
    pub radius: f64,
    pub probes: usize,
    min_curvature: f64,
    max_curvature: f64,
}

impl GqConstants {
    pub fn estimate(problem: &GreedyGqProblem, count: usize, seed: u64) -> Result<Self> {
        let radius = PROBE_RADIUS_FACTOR * problem.r_theta;
        let mut grid = theta_probe_grid(problem.dim(), radius, count, seed);
        grid.push(DVector::zeros(problem.dim()));
        let mut out = Self {
            lambda1: 0.0,
            lambda1_literal: 0.0,
            lambda2: problem.lambda2,
            rho_max: 0.0,
            l_j: 0.0,
            r_theta: problem.r_theta,
            radius,
            probes: 0,
            min_curvature: f64::INFINITY,
            max_curvature: 0.0,
        };
        out.include(problem, &grid)?;
        Ok(out)
    }

    /// Extends the estimate with further points, e.g. visited iterates.
    pub fn include(&mut self, problem: &GreedyGqProblem, thetas: &[DVector<f64>]) -> Result<()> {
        let mut grads = Vec::with_capacity(thetas.len());
        for theta in thetas {
            let snap = problem.snapshot(theta)?;
            let curvature = sym_min_eigenvalue(&(snap.a.transpose() * &problem.sigma_inv * &snap.a));
            self.min_curvature = self.min_curvature.min(curvature);
            self.max_curvature = self.max_curvature.max(curvature);
            let policy = softmax_policy(&problem.features, theta, problem.tau)?;
            self.rho_max = self.rho_max.max(policy.max_ratio(&problem.behavior)?);
            grads.push(snap.gradient);
        }
        let mut quotient = self.l_j / LIPSCHITZ_SAFETY;
        for i in 0..thetas.len() {
            for j in (i + 1)..thetas.len() {
                let dist = (&thetas[i] - &thetas[j]).norm();
                if dist > 0.0 {
                    quotient = quotient.max((&grads[i] - &grads[j]).norm() / dist);
                }
            }
        }
        if !(self.min_curvature > 0.0) {
            return Err(Error::AssumptionViolation(format!(
                "A_θᵀSigma⁻¹A_θ is singular on the probe grid (smallest eigenvalue {:e})",
                self.min_curvature
            )));
        }
        self.l_j = LIPSCHITZ_SAFETY * quotient;
        self.lambda1 = 1.0 / self.min_curvature;
        self.lambda1_literal = 1.0 / self.max_curvature;
        self.probes += thetas.len();
        Ok(())
    }

    pub fn guard(&self) -> RatioGuard {
        RatioGuard { rho_max: self.rho_max, radius: self.radius }
    }
}

/// Inputs of the Greedy-GQ convergence theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Constants {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho_max: f64,
    pub r_max: f64,
    pub r_theta: f64,
    pub l_j: f64,
    pub kappa: f64,
    pub rho: f64,
}

impl Theorem3Constants {
    pub fn from_parts(constants: &GqConstants, r_max: f64, mixing: &MixingEstimate) -> Self {
        Self {
            lambda1: constants.lambda1,
            lambda2: constants.lambda2,
            rho_max: constants.rho_max,
            r_max,
            r_theta: constants.r_theta,
            l_j: constants.l_j,
            kappa: mixing.kappa,
            rho: mixing.rho,
        }
    }

    pub fn all_ones(kappa: f64, rho: f64) -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, rho_max: 1.0, r_max: 1.0, r_theta: 1.0, l_j: 1.0, kappa, rho }
    }

    /// (1 + (κ−1)ρ)/(1−ρ).
    pub fn variance_factor(&self) -> f64 {
        (1.0 + (self.kappa - 1.0) * self.rho) / (1.0 - self.rho)
    }
}

/// Largest admissible stepsizes: (α, β, individual α terms, individual β terms).
pub fn theorem3_stepsizes(c: &Theorem3Constants) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let (l1, l2, rm) = (c.lambda1, c.lambda2, c.rho_max);
    let beta_terms = vec![l2 / 4.0, 8.0 / l2];
    let beta = beta_terms.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha_terms = vec![
        1.0 / (8.0 * c.l_j),
        l2 * l2.sqrt() * beta / (8.0 * 2f64.sqrt() * rm),
        c.l_j * l2.powi(3) * beta * beta / (5312.0 * rm * rm * l1 * l1),
    ];
    let alpha = alpha_terms.iter().copied().fold(f64::INFINITY, f64::min);
    (alpha, beta, alpha_terms, beta_terms)
}

/// C₂ = 32[2(ρ_max + 1)⁴R_θ² + (r_max² + 1)ρ_max²].
pub fn compute_c2(c: &Theorem3Constants) -> f64 {
    32.0 * (2.0 * (c.rho_max + 1.0).powi(4) * c.r_theta.powi(2) + (c.r_max.powi(2) + 1.0) * c.rho_max.powi(2))
}

/// C₁ = C₂ + (192ρ_max²/(λ₂β))(4R_θ²ρ_max² + r_max²)(32α²/(λ₂²β) + 2β/λ₂ + 2β²).
pub fn compute_c1(c: &Theorem3Constants, alpha: f64, beta: f64) -> f64 {
    let (l2, rm) = (c.lambda2, c.rho_max);
    compute_c2(c)
        + 192.0 * rm * rm / (l2 * beta)
            * (4.0 * c.r_theta.powi(2) * rm * rm + c.r_max.powi(2))
            * (32.0 * alpha * alpha / (l2 * l2 * beta) + 2.0 * beta / l2 + 2.0 * beta * beta)
}

/// 8(J₀ − J_T)/(αT) + (192ρ_max²/(λ₂β))‖w₀ − w(θ₀)‖²/T + 32C₁(1+(κ−1)ρ)/((1−ρ)M).
#[allow(clippy::too_many_arguments)]
pub fn theorem3_bound(
    c: &Theorem3Constants,
    alpha: f64,
    beta: f64,
    j0: f64,
    j_final: f64,
    w0_err_sq: f64,
    iterations: usize,
    batch: f64,
) -> f64 {
    let t = iterations as f64;
    8.0 * (j0 - j_final) / (alpha * t)
        + 192.0 * c.rho_max.powi(2) / (c.lambda2 * beta) * w0_err_sq / t
        + 32.0 * compute_c1(c, alpha, beta) * c.variance_factor() / batch
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Plan {
    pub constants: Theorem3Constants,
    pub target_eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_terms: Vec<f64>,
    pub beta_terms: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub batch_lower_bound: f64,
    pub batch_for_accuracy: f64,
    pub batch_size: f64,
    pub iterations: f64,
    pub j0: f64,
    pub w0_err_sq: f64,
    pub samples: f64,
}

impl Theorem3Plan {
    pub fn to_config(&self, seed: u64, cap: &ResourceCap) -> Result<TwoTimescaleConfig> {
        cap.check(self.batch_size, self.iterations)?;
        TwoTimescaleConfig::new(self.alpha, self.beta, self.batch_size as usize, self.iterations as usize, seed)
    }
}

pub fn theorem3_plan(c: &Theorem3Constants, j0: f64, w0_err_sq: f64, target_eps: f64, cap: &ResourceCap) -> Result<Theorem3Plan> {
    if !(target_eps > 0.0) {
        return Err(Error::InvalidConfig(format!("target accuracy {target_eps} must be positive")));
    }
    let (alpha, beta, alpha_terms, beta_terms) = theorem3_stepsizes(c);
    let (l2, rm) = (c.lambda2, c.rho_max);
    let mix = c.variance_factor();
    let first =
        128.0 * (rm * rm + 1.0 / (l2 * l2)) * (1.0 + l2 * l2 * beta / (4.0 * alpha * alpha) * (2.0 * beta / l2 + 2.0 * beta * beta));
    let second = beta * beta * l2.powi(3) * (rm + 1.0).powi(4) / (rm * rm * alpha * alpha);
    let batch_lower_bound = mix * first.max(second);
    let c1 = compute_c1(c, alpha, beta);
    let batch_for_accuracy = (64.0 * c1 * mix / target_eps).ceil();
    let batch_size = batch_lower_bound.ceil().max(batch_for_accuracy);
    if !(batch_size <= cap.max_batch) {
        return Err(Error::ResourceCap(format!("batch size {batch_size:e} exceeds cap {:e}", cap.max_batch)));
    }
    let iterations = (2.0 / target_eps * (8.0 * j0 / alpha + 192.0 * rm * rm * w0_err_sq / (l2 * beta))).ceil().max(1.0);
    Ok(Theorem3Plan {
        constants: *c,
        target_eps,
        alpha,
        beta,
        alpha_terms,
        beta_terms,
        c1,
        c2: compute_c2(c),
        batch_lower_bound,
        batch_for_accuracy,
        batch_size,
        iterations,
        j0,
        w0_err_sq,
        samples: batch_size * iterations,
    })
}

pub fn theorem3_config(
    problem: &GreedyGqProblem,
    constants: &GqConstants,
    mixing: &MixingEstimate,
    target_eps: f64,
    init: &RunInit,
    cap: &ResourceCap,
) -> Result<Theorem3Plan> {
    let c = Theorem3Constants::from_parts(constants, problem.mdp.r_max(), mixing);
    let snap = problem.snapshot(&init.theta)?;
    theorem3_plan(&c, snap.objective, (&init.w - &snap.w).norm_squared(), target_eps, cap)
}
