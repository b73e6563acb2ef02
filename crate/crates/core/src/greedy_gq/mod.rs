//! Greedy-GQ with linear state-action features and a softmax-greedy target
//! policy: exact objective, stated stationarity measure, the mini-batch
//! two-timescale iteration and its configuration calculator.
//!
//! Pairs (s, a) are weighted by d_b(s, a) = μ_b(s)π_b(a|s). With
//! ψ̄_θ(s') = Σ_b π_θ(b|s')φ(s', b):
//!
//! * `Sigma = E_db[φφᵀ]`, `K_θ = E_db[ψ̄_θ(s')φᵀ]`, `A_θ = E_db[φ(γψ̄_θ(s') − φ)ᵀ]`
//!   and `b = E_db[r̄φ]`, so that `A_θθ + b = E_db[δ̄_θφ]`;
//! * `w(θ) = Sigma⁻¹(A_θθ + b)`, `J(θ) = (A_θθ + b)ᵀw(θ)`;
//! * the stated gradient `∇J(θ) = 2[−(A_θθ + b) + γK_θw(θ)]`, which treats the
//!   policy as frozen and is not the derivative of J.

mod features;
mod theorem;

pub use features::{softmax_policy, StateActionFeatureMap};
pub use theorem::{
    compute_c1, compute_c2, theorem3_bound, theorem3_config, theorem3_plan, theorem3_stepsizes, GqConstants, Theorem3Constants,
    Theorem3Plan,
};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_len, guarded_inverse, guarded_solve, sym_min_eigenvalue};
use crate::mdp::{induced_chain, stationary_distribution, MdpModel, PolicyTable, StartState, TrajectoryStream, Transition};
use crate::schedule::{draw_output_index, Algorithm, RunEvent, RunInit, RunTrace, TraceRecord, TwoTimescaleConfig};

/// How the iteration handles the sampled next action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NextActionMode {
    /// Exact inner expectation over the next action; no importance ratios.
    #[default]
    Expected,
    /// Sampled next action reweighted by ρ_θ(s', a'), and ρ_θ(s, a) in the w-update.
    SampledNext,
}

/// Importance-ratio guard: once a visited ratio exceeds `rho_max`, θ is projected
/// onto the ball of radius `radius` for the rest of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioGuard {
    pub rho_max: f64,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct GreedyGqProblem {
    pub mdp: MdpModel,
    pub behavior: PolicyTable,
    pub features: StateActionFeatureMap,
    pub tau: f64,
    pub mode: NextActionMode,
    pub guard: Option<RatioGuard>,
    /// Stationary distribution of the behavior chain over states.
    pub mu: DVector<f64>,
    pub behavior_chain: DMatrix<f64>,
    /// d_b(s, a) in state-major order.
    pub pair_weight: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Smallest eigenvalue of Sigma.
    pub lambda2: f64,
    /// max(‖A₀⁻¹b‖, 1): the scale of the fixed point at the uniform policy.
    pub r_theta: f64,
}

/// Every exact quantity at one θ.
#[derive(Debug, Clone, PartialEq)]
pub struct GqSnapshot {
    pub policy: PolicyTable,
    pub a: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// A_θθ + b.
    pub residual: DVector<f64>,
    pub w: DVector<f64>,
    pub objective: f64,
    pub gradient: DVector<f64>,
}

impl GreedyGqProblem {
    pub fn new(mdp: MdpModel, behavior: PolicyTable, features: StateActionFeatureMap, tau: f64) -> Result<Self> {
        behavior.check_shape(&mdp)?;
        let (n, k) = (mdp.n_states(), mdp.n_actions());
        if features.n_states() != n || features.n_actions() != k {
            return Err(Error::DimensionMismatch {
                what: "state-action feature rows",
                expected: n * k,
                found: features.n_states() * features.n_actions(),
            });
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidConfig(format!("temperature {tau} must be positive and finite")));
        }
        for s in 0..n {
            for a in 0..k {
                if behavior.prob(s, a) <= 0.0 {
                    return Err(Error::Support { state: s, action: a });
                }
            }
        }
        let behavior_chain = induced_chain(&mdp, &behavior)?;
        let mu = stationary_distribution(&behavior_chain)?;
        let d = features.dim();
        let mut pair_weight = Vec::with_capacity(n * k);
        let mut sigma = DMatrix::zeros(d, d);
        let mut b = DVector::zeros(d);
        for s in 0..n {
            for a in 0..k {
                let weight = mu[s] * behavior.prob(s, a);
                pair_weight.push(weight);
                let phi = features.phi(s, a);
                sigma.ger(weight, phi, phi, 1.0);
                b.axpy(weight * mdp.expected_reward(s, a), phi, 1.0);
            }
        }
        let sigma_inv = guarded_inverse(&sigma, "state-action feature covariance")?;
        let lambda2 = sym_min_eigenvalue(&sigma);
        let mut problem = Self {
            mdp,
            behavior,
            features,
            tau,
            mode: NextActionMode::Expected,
            guard: None,
            mu,
            behavior_chain,
            pair_weight,
            sigma,
            sigma_inv,
            b,
            lambda2,
            r_theta: 1.0,
        };
        let zero = DVector::zeros(d);
        let a0 = problem.snapshot(&zero)?.a;
        let theta_zero = guarded_solve(&a0, &problem.b, "A at θ = 0")?;
        problem.r_theta = theta_zero.norm().max(1.0);
        Ok(problem)
    }

    pub fn with_mode(mut self, mode: NextActionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_guard(mut self, guard: RatioGuard) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    /// ψ̄_θ(s') for every state.
    fn expected_next_features(&self, policy: &PolicyTable) -> Vec<DVector<f64>> {
        (0..self.mdp.n_states())
            .map(|s| {
                let mut psi = DVector::zeros(self.dim());
                for a in 0..self.mdp.n_actions() {
                    psi.axpy(policy.prob(s, a), self.features.phi(s, a), 1.0);
                }
                psi
            })
            .collect()
    }

    /// A_θ and K_θ at the policy π_θ.
    pub fn matrices(&self, policy: &PolicyTable) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, k, d) = (self.mdp.n_states(), self.mdp.n_actions(), self.dim());
        let psi = self.expected_next_features(policy);
        let mut kmat = DMatrix::zeros(d, d);
        let mut next = DVector::zeros(d);
        for s in 0..n {
            for a in 0..k {
                let weight = self.pair_weight[s * k + a];
                if weight == 0.0 {
                    continue;
                }
                next.fill(0.0);
                for (s2, p) in self.mdp.transition_row(s, a).iter().enumerate() {
                    if *p != 0.0 {
                        next.axpy(*p, &psi[s2], 1.0);
                    }
                }
                kmat.ger(weight, &next, self.features.phi(s, a), 1.0);
            }
        }
        let a = kmat.transpose() * self.gamma() - &self.sigma;
        (a, kmat)
    }

    pub fn snapshot(&self, theta: &DVector<f64>) -> Result<GqSnapshot> {
        check_len("theta", theta, self.dim())?;
        let policy = softmax_policy(&self.features, theta, self.tau)?;
        let (a, k) = self.matrices(&policy);
        let residual = &a * theta + &self.b;
        let w = &self.sigma_inv * &residual;
        let objective = residual.dot(&w).max(0.0);
        let gradient = (&k * &w * self.gamma() - &residual) * 2.0;
        Ok(GqSnapshot { policy, a, k, residual, w, objective, gradient })
    }

    fn record(&self, t: usize, samples: u64, theta: &DVector<f64>, w: &DVector<f64>) -> Result<TraceRecord> {
        let snap = self.snapshot(theta)?;
        Ok(TraceRecord {
            t,
            samples,
            theta_err_sq: None,
            tracking_err_sq: (w - &snap.w).norm_squared(),
            objective: snap.objective,
            grad_norm_sq: snap.gradient.norm_squared(),
        })
    }
}

/// J(θ) = (A_θθ + b)ᵀSigma⁻¹(A_θθ + b).
pub fn gq_objective(problem: &GreedyGqProblem, theta: &DVector<f64>) -> Result<f64> {
    Ok(problem.snapshot(theta)?.objective)
}

/// w(θ) = Sigma⁻¹(A_θθ + b).
pub fn gq_w_of_theta(problem: &GreedyGqProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(problem.snapshot(theta)?.w)
}

/// The stated stationarity measure 2[−(A_θθ + b) + γK_θw(θ)].
pub fn gq_gradient(problem: &GreedyGqProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(problem.snapshot(theta)?.gradient)
}

/// Expected θ-direction of the default iteration at (θ, u): (A_θθ + b) − γK_θu.
pub fn gq_expected_theta_direction(problem: &GreedyGqProblem, theta: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("u", u, problem.dim())?;
    let snap = problem.snapshot(theta)?;
    Ok(&snap.residual - &snap.k * u * problem.gamma())
}

/// Inputs of one iteration that do not change within a run.
#[derive(Debug, Clone, Copy)]
pub struct GqStepContext<'a> {
    pub features: &'a StateActionFeatureMap,
    pub behavior: &'a PolicyTable,
    pub tau: f64,
    pub gamma: f64,
    pub mode: NextActionMode,
}

/// One iteration at the old (θ, w). In the default mode, with Q̄_θ(s') = ψ̄_θ(s')ᵀθ
/// and δ_j = r_j + γQ̄_θ(s'_j) − φ_jᵀθ:
///
/// w' = w + β/M Σ_j (−φ_jφ_jᵀw + δ_jφ_j),
/// θ' = θ + α/M Σ_j (δ_jφ_j − γψ̄_θ(s'_j)φ_jᵀw).
///
/// In the sampled-next mode δ_j uses φ(s'_j, a'_j), the w-update weights δ_jφ_j
/// by ρ_θ(s_j, a_j) and the θ-summand becomes ρ_θ(s'_j, a'_j)(δ_jφ_j − γφ(s'_j, a'_j)φ_jᵀw).
pub fn greedy_gq_step(
    theta: &DVector<f64>,
    w: &DVector<f64>,
    batch: &[Transition],
    alpha: f64,
    beta: f64,
    ctx: &GqStepContext<'_>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = ctx.features.dim();
    check_len("theta", theta, d)?;
    check_len("w", w, d)?;
    if batch.is_empty() {
        return Err(Error::Precondition("batch must hold at least one sample".into()));
    }
    let policy = softmax_policy(ctx.features, theta, ctx.tau)?;
    let (n, k) = (ctx.features.n_states(), ctx.features.n_actions());
    let mut dw = DVector::zeros(d);
    let mut dtheta = DVector::zeros(d);
    match ctx.mode {
        NextActionMode::Expected => {
            let psi: Vec<DVector<f64>> =
                (0..n).map(|s| (0..k).fold(DVector::zeros(d), |acc, a| acc + ctx.features.phi(s, a) * policy.prob(s, a))).collect();
            let q_bar: Vec<f64> = psi.iter().map(|p| p.dot(theta)).collect();
            for x in batch {
                let phi = ctx.features.phi(x.s, x.a);
                let delta = x.r + ctx.gamma * q_bar[x.s_next] - phi.dot(theta);
                let pw = phi.dot(w);
                dw.axpy(delta - pw, phi, 1.0);
                dtheta.axpy(delta, phi, 1.0);
                dtheta.axpy(-ctx.gamma * pw, &psi[x.s_next], 1.0);
            }
        }
        NextActionMode::SampledNext => {
            for x in batch {
                let phi = ctx.features.phi(x.s, x.a);
                let phi_next = ctx.features.phi(x.s_next, x.a_next);
                let rho = policy.ratio(ctx.behavior, x.s, x.a)?;
                let rho_next = policy.ratio(ctx.behavior, x.s_next, x.a_next)?;
                let delta = x.r + ctx.gamma * phi_next.dot(theta) - phi.dot(theta);
                let pw = phi.dot(w);
                dw.axpy(rho * delta - pw, phi, 1.0);
                dtheta.axpy(rho_next * delta, phi, 1.0);
                dtheta.axpy(-rho_next * ctx.gamma * pw, phi_next, 1.0);
            }
        }
    }
    let m = batch.len() as f64;
    Ok((theta + dtheta * (alpha / m), w + dw * (beta / m)))
}

/// Largest ρ_θ over the pairs visited by a batch.
fn visited_ratio(policy: &PolicyTable, behavior: &PolicyTable, batch: &[Transition]) -> Result<f64> {
    let mut max = 0.0f64;
    for x in batch {
        max = max.max(policy.ratio(behavior, x.s, x.a)?).max(policy.ratio(behavior, x.s_next, x.a_next)?);
    }
    Ok(max)
}

/// Runs T iterations on consecutive windows of one behavior trajectory started
/// from its stationary distribution, and draws the uniform output index.
pub fn run_greedy_gq(problem: &GreedyGqProblem, config: &TwoTimescaleConfig, init: &RunInit) -> Result<RunTrace> {
    config.validate()?;
    let d = problem.dim();
    check_len("initial theta", &init.theta, d)?;
    check_len("initial w", &init.w, d)?;
    let start = StartState::Distribution(problem.mu.iter().copied().collect());
    let mut stream = TrajectoryStream::new(&problem.mdp, &problem.behavior, config.seed, &start)?;
    let ctx = GqStepContext {
        features: &problem.features,
        behavior: &problem.behavior,
        tau: problem.tau,
        gamma: problem.gamma(),
        mode: problem.mode,
    };
    let mut theta = init.theta.clone();
    let mut w = init.w.clone();
    let mut events = Vec::new();
    let mut projecting = false;
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut thetas = Vec::with_capacity(config.iterations + 1);
    records.push(problem.record(0, 0, &theta, &w)?);
    thetas.push(theta.clone());
    let mut batch = Vec::with_capacity(config.batch_size);
    for t in 1..=config.iterations {
        stream.fill_batch(&mut batch, config.batch_size);
        if let Some(guard) = problem.guard.filter(|_| !projecting) {
            let policy = softmax_policy(&problem.features, &theta, problem.tau)?;
            let ratio = visited_ratio(&policy, &problem.behavior, &batch)?;
            if ratio > guard.rho_max {
                projecting = true;
                events.push(RunEvent {
                    t,
                    message: format!(
                        "importance ratio {ratio:e} exceeds ρ_max = {:e}; projecting θ onto radius {:e}",
                        guard.rho_max, guard.radius
                    ),
                });
            }
        }
        let (mut th, wn) = greedy_gq_step(&theta, &w, &batch, config.alpha, config.beta, &ctx)?;
        if let (true, Some(guard)) = (projecting, problem.guard) {
            let norm = th.norm();
            if norm > guard.radius {
                th *= guard.radius / norm;
            }
        }
        theta = th;
        w = wn;
        records.push(problem.record(t, stream.cursor(), &theta, &w)?);
        thetas.push(theta.clone());
    }
    let output_index = draw_output_index(config.seed, config.iterations);
    let output_theta = output_index.map(|i| thetas[i].clone());
    Ok(RunTrace {
        algorithm: Algorithm::GreedyGq,
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
pub fn run_greedy_gq_ensemble(
    problem: &GreedyGqProblem,
    config: &TwoTimescaleConfig,
    init: &RunInit,
    seeds: &[u64],
) -> Result<Vec<RunTrace>> {
    seeds.par_iter().map(|&seed| run_greedy_gq(problem, &config.with_seed(seed), init)).collect()
}

#[cfg(test)]
mod tests;
