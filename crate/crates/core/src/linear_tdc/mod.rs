//! Off-policy evaluation with linear features: exact MSPBE oracles, the
//! mini-batch two-timescale TDC iteration and its configuration calculator.
//!
//! Conventions used throughout:
//!
//! * `A = E_μb[φ(s)(γE_π[φ(s')|s] − φ(s))ᵀ]` and `b = E_μb[E_π[r|s]φ(s)]`, so
//!   that `Aθ + b` is the expected importance-weighted TD update `E[ρδφ]`.
//! * `Sigma = E_μb[φφᵀ] = −C` and `B = γE_μb[E_π[φ(s')|s]φ(s)ᵀ]`.
//! * `J(θ) = (Aθ+b)ᵀ Sigma⁻¹ (Aθ+b)`, `w(θ) = Sigma⁻¹(Aθ+b)` and
//!   `−½∇J(θ) = (Aθ+b) − B w(θ)`.

mod features;
mod theorem;

pub(crate) use features::random_rows;
pub use features::LinearFeatureMap;
pub use theorem::{
    compute_a1, linear_tracking_coefficients, theorem1_bound, theorem1_config, theorem1_plan, theorem1_stepsizes, Theorem1Constants,
    Theorem1Plan, TrackingCoefficients,
};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_len, guarded_inverse, guarded_solve, sym_max_eigenvalue, sym_min_eigenvalue};
use crate::mdp::{induced_chain, stationary_distribution, MdpModel, PolicyTable, StartState, TrajectoryStream, Transition};
use crate::schedule::{Algorithm, RunInit, RunTrace, TraceRecord, TwoTimescaleConfig};

/// Closed-form quantities of the off-policy linear evaluation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTdcExact {
    pub a: DMatrix<f64>,
    /// γE_μb[E_π[φ(s')|s]φ(s)ᵀ].
    pub b_mat: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
    pub b: DVector<f64>,
    pub theta_star: DVector<f64>,
    /// Smallest eigenvalue of AᵀSigma⁻¹A (the contraction modulus).
    pub lambda1: f64,
    /// Largest eigenvalue of AᵀSigma⁻¹A (largest-magnitude reading of |λ_max(AᵀC⁻¹A)|).
    pub lambda1_literal: f64,
    /// Smallest eigenvalue of Sigma.
    pub lambda2: f64,
    /// Largest eigenvalue of Sigma (largest-magnitude reading of |λ_max(C)|).
    pub lambda2_literal: f64,
    pub rho_max: f64,
    pub r_theta: f64,
    pub r_max: f64,
    pub gamma: f64,
    /// Stationary distribution of the behavior chain.
    pub mu: DVector<f64>,
    /// Transition matrix of the behavior chain.
    pub behavior_chain: DMatrix<f64>,
}

/// Builds every exact quantity by summation over (s, a, s').
pub fn build_linear_exact(
    mdp: &MdpModel,
    behavior: &PolicyTable,
    target: &PolicyTable,
    features: &LinearFeatureMap,
) -> Result<LinearTdcExact> {
    behavior.check_shape(mdp)?;
    target.check_shape(mdp)?;
    if features.n_states() != mdp.n_states() {
        return Err(Error::DimensionMismatch { what: "feature rows", expected: mdp.n_states(), found: features.n_states() });
    }
    let rho_max = target.max_ratio(behavior)?;
    let behavior_chain = induced_chain(mdp, behavior)?;
    let mu = stationary_distribution(&behavior_chain)?;
    let target_chain = induced_chain(mdp, target)?;
    let r_pi = mdp.policy_reward(target)?;
    let (n, d, gamma) = (mdp.n_states(), features.dim(), mdp.gamma());

    let mut a = DMatrix::zeros(d, d);
    let mut cross = DMatrix::zeros(d, d);
    let mut sigma = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for s in 0..n {
        let phi = features.phi(s);
        let mut next = DVector::zeros(d);
        for s2 in 0..n {
            next.axpy(target_chain[(s, s2)], features.phi(s2), 1.0);
        }
        let m = mu[s];
        a += (phi * (&next * gamma - phi).transpose()) * m;
        cross += (&next * phi.transpose()) * m;
        sigma += (phi * phi.transpose()) * m;
        b.axpy(m * r_pi[s], phi, 1.0);
    }
    let sigma_inv = guarded_inverse(&sigma, "feature covariance Sigma")?;
    let theta_star = -guarded_solve(&a, &b, "A")?;
    let normal = a.transpose() * &sigma_inv * &a;
    let lambda1 = sym_min_eigenvalue(&normal);
    let lambda2 = sym_min_eigenvalue(&sigma);
    let r_max = mdp.r_max();
    Ok(LinearTdcExact {
        c: -&sigma,
        b_mat: cross * gamma,
        lambda1_literal: sym_max_eigenvalue(&normal),
        lambda2_literal: sym_max_eigenvalue(&sigma),
        r_theta: (r_max / lambda1).max(theta_star.norm()),
        a,
        sigma,
        sigma_inv,
        b,
        theta_star,
        lambda1,
        lambda2,
        rho_max,
        r_max,
        gamma,
        mu,
        behavior_chain,
    })
}

impl LinearTdcExact {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Aθ + b, the expected TD update E[ρδφ].
    pub fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.a * theta + &self.b
    }

    /// ‖θ − θ*‖² + ‖w − w(θ)‖².
    pub fn lyapunov(&self, theta: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (theta - &self.theta_star).norm_squared() + (w - w_of_theta(self, theta)).norm_squared()
    }
}

/// J(θ) = (Aθ+b)ᵀ Sigma⁻¹ (Aθ+b).
pub fn mspbe(exact: &LinearTdcExact, theta: &DVector<f64>) -> f64 {
    let res = exact.residual(theta);
    res.dot(&(&exact.sigma_inv * &res)).max(0.0)
}

/// w(θ) = Sigma⁻¹(Aθ + b).
pub fn w_of_theta(exact: &LinearTdcExact, theta: &DVector<f64>) -> DVector<f64> {
    &exact.sigma_inv * exact.residual(theta)
}

/// −½∇J(θ) = (Aθ+b) − B w(θ), the expected TDC θ-direction at w = w(θ).
pub fn tdc_gradient(exact: &LinearTdcExact, theta: &DVector<f64>) -> DVector<f64> {
    let res = exact.residual(theta);
    let w = &exact.sigma_inv * &res;
    res - &exact.b_mat * w
}

/// ∇J(θ).
pub fn mspbe_gradient(exact: &LinearTdcExact, theta: &DVector<f64>) -> DVector<f64> {
    tdc_gradient(exact, theta) * -2.0
}

/// Importance ratios π(a|s)/π_b(a|s); `None` where the behavior never acts.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    n_actions: usize,
    ratios: Vec<Option<f64>>,
}

impl RatioTable {
    pub fn new(target: &PolicyTable, behavior: &PolicyTable) -> Self {
        let n_actions = behavior.n_actions();
        let ratios = (0..behavior.n_states())
            .flat_map(|s| (0..n_actions).map(move |a| (s, a)))
            .map(|(s, a)| {
                let pb = behavior.prob(s, a);
                (pb > 0.0).then(|| target.prob(s, a) / pb)
            })
            .collect();
        Self { n_actions, ratios }
    }

    pub fn get(&self, s: usize, a: usize) -> Result<f64> {
        self.ratios[s * self.n_actions + a].ok_or(Error::Support { state: s, action: a })
    }
}

/// One iteration of the mini-batch update:
///
/// w' = w + β/M Σ_j (−φ_jφ_jᵀw + ρ_jδ_jφ_j),
/// θ' = θ + α/M Σ_j ρ_j(δ_jφ_j − γφ'_jφ_jᵀw),
///
/// with δ_j = r_j + γφ'_jᵀθ − φ_jᵀθ, everything evaluated at the old (θ, w).
#[allow(clippy::too_many_arguments)]
pub fn linear_tdc_step(
    theta: &DVector<f64>,
    w: &DVector<f64>,
    batch: &[Transition],
    alpha: f64,
    beta: f64,
    features: &LinearFeatureMap,
    ratios: &RatioTable,
    gamma: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = features.dim();
    check_len("theta", theta, d)?;
    check_len("w", w, d)?;
    if batch.is_empty() {
        return Err(Error::Precondition("batch must hold at least one sample".into()));
    }
    let n = features.n_states();
    let v: Vec<f64> = (0..n).map(|s| features.phi(s).dot(theta)).collect();
    let u: Vec<f64> = (0..n).map(|s| features.phi(s).dot(w)).collect();
    let mut dw = DVector::zeros(d);
    let mut dtheta = DVector::zeros(d);
    for x in batch {
        let rho = ratios.get(x.s, x.a)?;
        let delta = x.r + gamma * v[x.s_next] - v[x.s];
        let phi = features.phi(x.s);
        dw.axpy(rho * delta - u[x.s], phi, 1.0);
        dtheta.axpy(rho * delta, phi, 1.0);
        dtheta.axpy(-rho * gamma * u[x.s], features.phi(x.s_next), 1.0);
    }
    let m = batch.len() as f64;
    Ok((theta + dtheta * (alpha / m), w + dw * (beta / m)))
}

/// A fully specified off-policy evaluation problem with its exact oracles.
#[derive(Debug, Clone)]
pub struct LinearTdcProblem {
    pub mdp: MdpModel,
    pub behavior: PolicyTable,
    pub target: PolicyTable,
    pub features: LinearFeatureMap,
    pub exact: LinearTdcExact,
    pub ratios: RatioTable,
}

impl LinearTdcProblem {
    pub fn new(mdp: MdpModel, behavior: PolicyTable, target: PolicyTable, features: LinearFeatureMap) -> Result<Self> {
        let exact = build_linear_exact(&mdp, &behavior, &target, &features)?;
        let ratios = RatioTable::new(&target, &behavior);
        Ok(Self { mdp, behavior, target, features, exact, ratios })
    }

    fn record(&self, t: usize, samples: u64, theta: &DVector<f64>, w: &DVector<f64>) -> TraceRecord {
        let ex = &self.exact;
        let res = ex.residual(theta);
        let w_star = &ex.sigma_inv * &res;
        let grad = (&res - &ex.b_mat * &w_star) * -2.0;
        TraceRecord {
            t,
            samples,
            theta_err_sq: Some((theta - &ex.theta_star).norm_squared()),
            tracking_err_sq: (w - &w_star).norm_squared(),
            objective: res.dot(&w_star).max(0.0),
            grad_norm_sq: grad.norm_squared(),
        }
    }
}

/// Runs T iterations on consecutive, non-overlapping windows of one behavior
/// trajectory started from the behavior chain's stationary distribution.
pub fn run_linear_tdc(problem: &LinearTdcProblem, config: &TwoTimescaleConfig, init: &RunInit) -> Result<RunTrace> {
    config.validate()?;
    let d = problem.features.dim();
    check_len("initial theta", &init.theta, d)?;
    check_len("initial w", &init.w, d)?;
    let start = StartState::Distribution(problem.exact.mu.iter().copied().collect());
    let mut stream = TrajectoryStream::new(&problem.mdp, &problem.behavior, config.seed, &start)?;
    let mut theta = init.theta.clone();
    let mut w = init.w.clone();
    let mut records = Vec::with_capacity(config.iterations + 1);
    records.push(problem.record(0, 0, &theta, &w));
    let mut batch = Vec::with_capacity(config.batch_size);
    for t in 1..=config.iterations {
        stream.fill_batch(&mut batch, config.batch_size);
        let (th, wn) =
            linear_tdc_step(&theta, &w, &batch, config.alpha, config.beta, &problem.features, &problem.ratios, problem.mdp.gamma())?;
        theta = th;
        w = wn;
        records.push(problem.record(t, stream.cursor(), &theta, &w));
    }
    Ok(RunTrace {
        algorithm: Algorithm::LinearTdc,
        config: *config,
        records,
        theta_final: theta,
        w_final: w,
        output_index: None,
        output_theta: None,
        events: Vec::new(),
    })
}

/// Runs one trace per seed in parallel; results are ordered as `seeds`.
pub fn run_linear_ensemble(
    problem: &LinearTdcProblem,
    config: &TwoTimescaleConfig,
    init: &RunInit,
    seeds: &[u64],
) -> Result<Vec<RunTrace>> {
    seeds.par_iter().map(|&seed| run_linear_tdc(problem, &config.with_seed(seed), init)).collect()
}

#[cfg(test)]
mod tests;
