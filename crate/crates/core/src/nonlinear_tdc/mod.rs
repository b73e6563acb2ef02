//! On-policy evaluation with a smooth nonlinear value model: exact projected
//! Bellman error oracles, the mini-batch two-timescale nonlinear TDC iteration
//! and its constant ledger and configuration calculator.
//!
//! With φ_θ = ∇v, H_θ = ∇²v and δ̄(s) = r_π(s) + γE[v(s')|s] − v(s):
//!
//! * `Gram(θ) = E_μ[φ_θφ_θᵀ]`, `drift(θ) = E_μ[δ̄φ_θ]`, `cross(θ) = E_μ[φ_θ(s')φ_θ(s)ᵀ]`;
//! * `w(θ) = Gram⁻¹drift`, `J(θ) = driftᵀGram⁻¹drift`;
//! * `h(θ,u) = E_μ[(δ̄ − φ_θᵀu)H_θu]` and `−½∇J = drift − γ·cross·w(θ) − h(θ, w(θ))`.

mod constants;
mod model;

pub use constants::{
    compute_cf, compute_cg, compute_lw, compute_rw, estimate_model_constants, nonlinear_tracking_coefficients, theorem2_bound,
    theorem2_config, theorem2_plan, theorem2_stepsizes, theta_probe_grid, ConstantsReport, SmoothnessLedger, Theorem2Constants,
    Theorem2Plan,
};
pub use model::{LinearValueModel, ModelConstants, ReferenceModel, TanhLinearModel, ValueModel};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_len, guarded_solve, sym_min_eigenvalue};
use crate::mdp::{induced_chain, stationary_distribution, MdpModel, PolicyTable, StartState, TrajectoryStream, Transition};
use crate::schedule::{draw_output_index, Algorithm, RunEvent, RunInit, RunTrace, TraceRecord, TwoTimescaleConfig};

/// An on-policy evaluation problem: MDP, evaluated policy and value model.
#[derive(Debug, Clone)]
pub struct NonlinearProblem<M: ValueModel = ReferenceModel> {
    pub mdp: MdpModel,
    pub policy: PolicyTable,
    pub model: M,
    /// Transition matrix of the policy chain.
    pub chain: DMatrix<f64>,
    /// Stationary distribution of the policy chain.
    pub mu: DVector<f64>,
    /// Expected one-step reward r_π(s).
    pub reward: DVector<f64>,
    /// Constants the model declares over the ball ‖θ‖ ≤ `declared.theta_radius`.
    pub declared: ModelConstants,
}

/// Every exact quantity at one θ.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSnapshot {
    pub values: DVector<f64>,
    pub features: Vec<DVector<f64>>,
    pub hessians: Vec<DMatrix<f64>>,
    /// Expected TD error per state.
    pub delta: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub cross: DMatrix<f64>,
    pub w: DVector<f64>,
    pub objective: f64,
}

impl<M: ValueModel> NonlinearProblem<M> {
    pub fn new(mdp: MdpModel, policy: PolicyTable, model: M, theta_radius: f64) -> Result<Self> {
        policy.check_shape(&mdp)?;
        if model.n_states() != mdp.n_states() {
            return Err(Error::DimensionMismatch { what: "value model states", expected: mdp.n_states(), found: model.n_states() });
        }
        if !(theta_radius > 0.0) {
            return Err(Error::InvalidConfig(format!("θ radius {theta_radius} must be positive")));
        }
        let chain = induced_chain(&mdp, &policy)?;
        let mu = stationary_distribution(&chain)?;
        let reward = mdp.policy_reward(&policy)?;
        let declared = model.declared_constants(&mu, theta_radius);
        Ok(Self { mdp, policy, model, chain, mu, reward, declared })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    /// Evaluates the exact oracles at θ; fails if Gram(θ) is numerically singular.
    pub fn snapshot(&self, theta: &DVector<f64>) -> Result<NonlinearSnapshot> {
        check_len("theta", theta, self.dim())?;
        let n = self.mdp.n_states();
        let d = self.dim();
        let gamma = self.gamma();
        let values = DVector::from_iterator(n, (0..n).map(|s| self.model.value(s, theta)));
        let features: Vec<_> = (0..n).map(|s| self.model.gradient(s, theta)).collect();
        let hessians: Vec<_> = (0..n).map(|s| self.model.hessian(s, theta)).collect();
        let next_values = &self.chain * &values;
        let delta = &self.reward + next_values * gamma - &values;
        let mut gram = DMatrix::zeros(d, d);
        let mut drift = DVector::zeros(d);
        let mut cross = DMatrix::zeros(d, d);
        for s in 0..n {
            let mu = self.mu[s];
            if mu == 0.0 {
                continue;
            }
            let phi = &features[s];
            gram.ger(mu, phi, phi, 1.0);
            drift.axpy(mu * delta[s], phi, 1.0);
            let mut next = DVector::zeros(d);
            for (s2, next_phi) in features.iter().enumerate() {
                let p = self.chain[(s, s2)];
                if p != 0.0 {
                    next.axpy(p, next_phi, 1.0);
                }
            }
            cross.ger(mu, &next, phi, 1.0);
        }
        let w = guarded_solve(&gram, &drift, "feature Gram matrix")?;
        let objective = drift.dot(&w).max(0.0);
        Ok(NonlinearSnapshot { values, features, hessians, delta, gram, drift, cross, w, objective })
    }

    fn h_from_snapshot(&self, snap: &NonlinearSnapshot, u: &DVector<f64>) -> DVector<f64> {
        let mut h = DVector::zeros(self.dim());
        for s in 0..self.mdp.n_states() {
            let mu = self.mu[s];
            if mu == 0.0 {
                continue;
            }
            let weight = mu * (snap.delta[s] - snap.features[s].dot(u));
            h.gemv(weight, &snap.hessians[s], u, 1.0);
        }
        h
    }

    fn direction_from_snapshot(&self, snap: &NonlinearSnapshot) -> DVector<f64> {
        &snap.drift - &snap.cross * &snap.w * self.gamma() - self.h_from_snapshot(snap, &snap.w)
    }

    fn record(&self, t: usize, samples: u64, theta: &DVector<f64>, w: &DVector<f64>) -> Result<(TraceRecord, f64)> {
        let snap = self.snapshot(theta)?;
        let grad = self.direction_from_snapshot(&snap) * -2.0;
        let record = TraceRecord {
            t,
            samples,
            theta_err_sq: None,
            tracking_err_sq: (w - &snap.w).norm_squared(),
            objective: snap.objective,
            grad_norm_sq: grad.norm_squared(),
        };
        Ok((record, sym_min_eigenvalue(&snap.gram)))
    }
}

/// w(θ) = Gram(θ)⁻¹drift(θ).
pub fn w_of_theta_nl<M: ValueModel>(problem: &NonlinearProblem<M>, theta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(problem.snapshot(theta)?.w)
}

/// J(θ) = drift(θ)ᵀGram(θ)⁻¹drift(θ).
pub fn nonlinear_j<M: ValueModel>(problem: &NonlinearProblem<M>, theta: &DVector<f64>) -> Result<f64> {
    Ok(problem.snapshot(theta)?.objective)
}

/// ∇J(θ) = −2[drift − γ·cross·w(θ) − h(θ, w(θ))].
pub fn nonlinear_grad<M: ValueModel>(problem: &NonlinearProblem<M>, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let snap = problem.snapshot(theta)?;
    Ok(problem.direction_from_snapshot(&snap) * -2.0)
}

/// Exact h(θ, u) = E_μ[(δ̄ − φ_θᵀu)H_θu].
pub fn h_term_exact<M: ValueModel>(problem: &NonlinearProblem<M>, theta: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("u", u, problem.dim())?;
    let snap = problem.snapshot(theta)?;
    Ok(problem.h_from_snapshot(&snap, u))
}

/// Single-sample h_j(θ, u) = (δ_j − φ_θ(s_j)ᵀu)H_θ(s_j)u.
pub fn h_term_sample<M: ValueModel>(model: &M, theta: &DVector<f64>, u: &DVector<f64>, x: &Transition, gamma: f64) -> DVector<f64> {
    let delta = x.r + gamma * model.value(x.s_next, theta) - model.value(x.s, theta);
    let phi = model.gradient(x.s, theta);
    model.hessian(x.s, theta) * u * (delta - phi.dot(u))
}

/// Expected θ-direction E[δφ_θ] − γ·cross(θ)u − h(θ, u) of the iteration at (θ, u).
pub fn expected_theta_direction<M: ValueModel>(
    problem: &NonlinearProblem<M>,
    theta: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("u", u, problem.dim())?;
    let snap = problem.snapshot(theta)?;
    Ok(&snap.drift - &snap.cross * u * problem.gamma() - problem.h_from_snapshot(&snap, u))
}

/// One iteration of the mini-batch update:
///
/// w' = w + β/M Σ_j (−φ_jφ_jᵀw + δ_jφ_j),
/// θ' = θ + α/M Σ_j (δ_jφ_j − γφ'_jφ_jᵀw − h_j(θ, w)),
///
/// with δ_j = r_j + γv(s'_j, θ) − v(s_j, θ), everything evaluated at the old (θ, w).
pub fn nonlinear_tdc_step<M: ValueModel>(
    theta: &DVector<f64>,
    w: &DVector<f64>,
    batch: &[Transition],
    alpha: f64,
    beta: f64,
    model: &M,
    gamma: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = model.dim();
    check_len("theta", theta, d)?;
    check_len("w", w, d)?;
    if batch.is_empty() {
        return Err(Error::Precondition("batch must hold at least one sample".into()));
    }
    let n = model.n_states();
    let values: Vec<f64> = (0..n).map(|s| model.value(s, theta)).collect();
    let features: Vec<DVector<f64>> = (0..n).map(|s| model.gradient(s, theta)).collect();
    let projected: Vec<f64> = features.iter().map(|phi| phi.dot(w)).collect();
    let curvature: Vec<DVector<f64>> = (0..n).map(|s| model.hessian(s, theta) * w).collect();
    let mut dw = DVector::zeros(d);
    let mut dtheta = DVector::zeros(d);
    for x in batch {
        let delta = x.r + gamma * values[x.s_next] - values[x.s];
        let pw = projected[x.s];
        let phi = &features[x.s];
        dw.axpy(delta - pw, phi, 1.0);
        dtheta.axpy(delta, phi, 1.0);
        dtheta.axpy(-gamma * pw, &features[x.s_next], 1.0);
        dtheta.axpy(-(delta - pw), &curvature[x.s], 1.0);
    }
    let m = batch.len() as f64;
    Ok((theta + dtheta * (alpha / m), w + dw * (beta / m)))
}

/// Runs T iterations on consecutive windows of one on-policy trajectory started
/// from the stationary distribution, and draws the uniform output index.
///
/// Aborts with an assumption violation if λ_min(Gram(θ_t)) drops below half the
/// declared floor λ_v; leaving the declared θ-ball is reported as an event.
pub fn run_nonlinear_tdc<M: ValueModel>(problem: &NonlinearProblem<M>, config: &TwoTimescaleConfig, init: &RunInit) -> Result<RunTrace> {
    config.validate()?;
    let d = problem.dim();
    check_len("initial theta", &init.theta, d)?;
    check_len("initial w", &init.w, d)?;
    let start = StartState::Distribution(problem.mu.iter().copied().collect());
    let mut stream = TrajectoryStream::new(&problem.mdp, &problem.policy, config.seed, &start)?;
    let floor = problem.declared.lambda_v / 2.0;
    let radius = problem.declared.theta_radius;
    let mut theta = init.theta.clone();
    let mut w = init.w.clone();
    let mut events = Vec::new();
    let mut outside = false;
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut thetas = Vec::with_capacity(config.iterations + 1);
    let mut observe = |t: usize, samples: u64, theta: &DVector<f64>, w: &DVector<f64>, events: &mut Vec<RunEvent>| {
        let (record, gram_min) = problem.record(t, samples, theta, w)?;
        if gram_min < floor {
            return Err(Error::AssumptionViolation(format!(
                "smallest feature-Gram eigenvalue {gram_min:e} at iteration {t} is below λ_v/2 = {floor:e}"
            )));
        }
        let norm = theta.norm();
        if norm > radius && !outside {
            outside = true;
            events.push(RunEvent { t, message: format!("‖θ‖ = {norm:e} left the declared radius {radius:e}") });
        }
        Ok(record)
    };
    records.push(observe(0, 0, &theta, &w, &mut events)?);
    thetas.push(theta.clone());
    let mut batch = Vec::with_capacity(config.batch_size);
    for t in 1..=config.iterations {
        stream.fill_batch(&mut batch, config.batch_size);
        let (th, wn) = nonlinear_tdc_step(&theta, &w, &batch, config.alpha, config.beta, &problem.model, problem.gamma())?;
        theta = th;
        w = wn;
        records.push(observe(t, stream.cursor(), &theta, &w, &mut events)?);
        thetas.push(theta.clone());
    }
    let output_index = draw_output_index(config.seed, config.iterations);
    let output_theta = output_index.map(|i| thetas[i].clone());
    Ok(RunTrace {
        algorithm: Algorithm::NonlinearTdc,
        config: *config,
        records,
        theta_final: theta,
        w_final: w,
        output_index,
        output_theta,
        events,
    })
}

/// Runs one trace per seed in parallel; results are ordered as `seeds`.
pub fn run_nonlinear_ensemble<M: ValueModel>(
    problem: &NonlinearProblem<M>,
    config: &TwoTimescaleConfig,
    init: &RunInit,
    seeds: &[u64],
) -> Result<Vec<RunTrace>> {
    seeds.par_iter().map(|&seed| run_nonlinear_tdc(problem, &config.with_seed(seed), init)).collect()
}
