//! Constant ledger, probe-based constant estimation and the configuration
//! calculator for the nonlinear iteration.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{nonlinear_grad, ModelConstants, NonlinearProblem, ValueModel};
use crate::error::{Error, Result};
use crate::linalg::sym_min_eigenvalue;
use crate::linear_tdc::TrackingCoefficients;
use crate::mdp::{MixingEstimate, Transition};
use crate::rng::{stream_rng, PROBE_STREAM};
use crate::schedule::{ResourceCap, RunInit, TwoTimescaleConfig};

/// Safety factor applied to probe estimates of L_J and L_e.
pub const LIPSCHITZ_SAFETY: f64 = 2.0;
const NEAR_PAIR_SCALE: f64 = 1e-3;
const DECLARED_SLACK: f64 = 1e-9;

/// R_w = C_φ(r_max + 2C_v)/λ_v, the bound on ‖w(θ)‖.
pub fn compute_rw(m: &ModelConstants, r_max: f64) -> f64 {
    m.c_phi * (r_max + 2.0 * m.c_v) / m.lambda_v
}

/// Lipschitz modulus of θ ↦ w(θ).
pub fn compute_lw(m: &ModelConstants, r_max: f64, gamma: f64) -> f64 {
    let td = r_max + (1.0 + gamma) * m.c_v;
    2.0 * m.c_phi * m.l_phi / (m.lambda_v * m.lambda_v) * td + (m.l_v * m.c_phi * (1.0 + gamma) + m.l_phi * td) / m.lambda_v
}

/// Bound on the single-sample θ-direction evaluated at w(θ).
pub fn compute_cg(m: &ModelConstants, r_max: f64, gamma: f64) -> f64 {
    let r_w = compute_rw(m, r_max);
    let td = r_max + (gamma + 1.0) * m.c_v;
    td * m.c_phi + gamma * m.c_phi * m.c_phi * r_w + (td + m.c_phi * r_w) * m.d_v * r_w
}

/// C_f = 6[C_φ²(r_max + 2C_v)² + C_φ⁴R_w].
pub fn compute_cf(m: &ModelConstants, r_max: f64) -> f64 {
    let r_w = compute_rw(m, r_max);
    let td = r_max + 2.0 * m.c_v;
    6.0 * (m.c_phi.powi(2) * td * td + m.c_phi.powi(4) * r_w)
}

/// Inputs of the nonlinear convergence theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Constants {
    pub model: ModelConstants,
    pub r_max: f64,
    pub gamma: f64,
    /// Lipschitz modulus of ∇J (safety factor already applied).
    pub l_j: f64,
    /// Lipschitz modulus of the sample direction in w (safety factor already applied).
    pub l_e: f64,
    pub kappa: f64,
    pub rho: f64,
}

impl Theorem2Constants {
    /// Declared model constants combined with probe estimates of L_J and L_e.
    pub fn from_parts(declared: &ModelConstants, report: &ConstantsReport, r_max: f64, gamma: f64, mixing: &MixingEstimate) -> Self {
        Self {
            model: *declared,
            r_max,
            gamma,
            l_j: LIPSCHITZ_SAFETY * report.l_j,
            l_e: LIPSCHITZ_SAFETY * report.l_e,
            kappa: mixing.kappa,
            rho: mixing.rho,
        }
    }

    /// Every constant one, with the given mixing pair and discount.
    pub fn all_ones(kappa: f64, rho: f64, gamma: f64) -> Self {
        Self { model: ModelConstants::all_ones(), r_max: 1.0, gamma, l_j: 1.0, l_e: 1.0, kappa, rho }
    }

    /// (1 + (κ−1)ρ)/(1−ρ).
    pub fn variance_factor(&self) -> f64 {
        (1.0 + (self.kappa - 1.0) * self.rho) / (1.0 - self.rho)
    }
}

/// Largest admissible stepsizes: (α, β, individual α terms, individual β terms).
pub fn theorem2_stepsizes(c: &Theorem2Constants) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let m = &c.model;
    let l_w = compute_lw(m, c.r_max, c.gamma);
    let beta_terms = vec![m.lambda_v / (8.0 * m.c_phi.powi(4)), 8.0 / m.lambda_v];
    let beta = beta_terms.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha_terms = vec![
        1.0 / (2.0 * c.l_j),
        m.lambda_v * beta / (8.0 * 2f64.sqrt() * l_w * c.l_e),
        c.l_j * m.lambda_v.powi(2) * beta * beta / (384.0 * l_w * l_w * c.l_e * c.l_e),
    ];
    let alpha = alpha_terms.iter().copied().fold(f64::INFINITY, f64::min);
    (alpha, beta, alpha_terms, beta_terms)
}

/// Derived constants of the nonlinear bound at stepsizes (α, β).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessLedger {
    pub l_j: f64,
    pub l_e: f64,
    pub l_w: f64,
    pub c_g: f64,
    pub c_f: f64,
    pub r_w: f64,
    pub d_1: f64,
    pub b_1: f64,
    pub b_2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_v: f64,
    pub variance_factor: f64,
}

impl SmoothnessLedger {
    pub fn new(c: &Theorem2Constants, alpha: f64, beta: f64) -> Self {
        let m = &c.model;
        let lv = m.lambda_v;
        let l_w = compute_lw(m, c.r_max, c.gamma);
        let c_g = compute_cg(m, c.r_max, c.gamma);
        let c_f = compute_cf(m, c.r_max);
        let d_1 = 128.0 * l_w * l_w * c_g * c_g * alpha * alpha / (lv * beta) + 4.0 * c_f * c_f * (beta / lv + 2.0 * beta * beta);
        let growth = 1.0 + c.l_j * alpha;
        let b_1 = 64.0 * growth * c.l_e * c.l_e / (lv * beta);
        let b_2 = 64.0 * growth * (c_g * c_g + 2.0 * d_1 * c.l_e * c.l_e / (lv * beta)) * c.variance_factor();
        Self {
            l_j: c.l_j,
            l_e: c.l_e,
            l_w,
            c_g,
            c_f,
            r_w: compute_rw(m, c.r_max),
            d_1,
            b_1,
            b_2,
            alpha,
            beta,
            lambda_v: lv,
            variance_factor: c.variance_factor(),
        }
    }
}

/// 8J(θ₀)/(αT) + B₁‖w₀ − w(θ₀)‖²/T + B₂/M.
pub fn theorem2_bound(ledger: &SmoothnessLedger, j0: f64, w0_err_sq: f64, iterations: usize, batch: f64) -> f64 {
    let t = iterations as f64;
    8.0 * j0 / (ledger.alpha * t) + ledger.b_1 * w0_err_sq / t + ledger.b_2 / batch
}

/// Coefficients of x_{t+1} ≤ contraction·x_t + coupling·‖∇J(θ_t)‖² + noise for
/// the nonlinear tracking error x_t = E‖w_t − w(θ_t)‖².
pub fn nonlinear_tracking_coefficients(ledger: &SmoothnessLedger, batch: usize) -> TrackingCoefficients {
    let (lv, a, b) = (ledger.lambda_v, ledger.alpha, ledger.beta);
    TrackingCoefficients {
        contraction: 1.0 - lv * b / 8.0,
        coupling: 2.0 * ledger.l_w * ledger.l_w * a * a / (lv * b),
        noise: ledger.d_1 * ledger.variance_factor / batch as f64,
    }
}

/// Calculator output: the schedule and every intermediate quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Plan {
    pub constants: Theorem2Constants,
    pub ledger: SmoothnessLedger,
    pub target_eps: f64,
    pub alpha_terms: Vec<f64>,
    pub beta_terms: Vec<f64>,
    pub batch_lower_bound: f64,
    pub batch_for_accuracy: f64,
    pub batch_size: f64,
    pub iterations: f64,
    pub j0: f64,
    pub w0_err_sq: f64,
    pub samples: f64,
    /// Whether α ≤ β holds at the stated minima.
    pub separated: bool,
}

impl Theorem2Plan {
    pub fn to_config(&self, seed: u64, cap: &ResourceCap) -> Result<TwoTimescaleConfig> {
        cap.check(self.batch_size, self.iterations)?;
        TwoTimescaleConfig::new(self.ledger.alpha, self.ledger.beta, self.batch_size as usize, self.iterations as usize, seed)
    }
}

/// Schedule from raw constants, J(θ₀) and ‖w₀ − w(θ₀)‖².
pub fn theorem2_plan(c: &Theorem2Constants, j0: f64, w0_err_sq: f64, target_eps: f64, cap: &ResourceCap) -> Result<Theorem2Plan> {
    if !(target_eps > 0.0) {
        return Err(Error::InvalidConfig(format!("target accuracy {target_eps} must be positive")));
    }
    let (alpha, beta, alpha_terms, beta_terms) = theorem2_stepsizes(c);
    let ledger = SmoothnessLedger::new(c, alpha, beta);
    let lv = c.model.lambda_v;
    let batch_lower_bound = (1.0 / lv + 2.0 * beta) * 96.0 * c.model.c_phi.powi(4) * c.variance_factor() / lv;
    let batch_for_accuracy = (2.0 * ledger.b_2 / target_eps).ceil();
    let batch_size = batch_lower_bound.ceil().max(batch_for_accuracy);
    if !(batch_size <= cap.max_batch) {
        return Err(Error::ResourceCap(format!("batch size {batch_size:e} exceeds cap {:e}", cap.max_batch)));
    }
    let iterations = (2.0 / target_eps * (8.0 * j0 / alpha + ledger.b_1 * w0_err_sq)).ceil().max(1.0);
    Ok(Theorem2Plan {
        constants: *c,
        ledger,
        target_eps,
        alpha_terms,
        beta_terms,
        batch_lower_bound,
        batch_for_accuracy,
        batch_size,
        iterations,
        j0,
        w0_err_sq,
        samples: batch_size * iterations,
        separated: alpha <= beta,
    })
}

/// Schedule for a concrete problem from its declared constants and a probe report.
pub fn theorem2_config<M: ValueModel>(
    problem: &NonlinearProblem<M>,
    report: &ConstantsReport,
    mixing: &MixingEstimate,
    target_eps: f64,
    init: &RunInit,
    cap: &ResourceCap,
) -> Result<Theorem2Plan> {
    let c = Theorem2Constants::from_parts(&problem.declared, report, problem.mdp.r_max(), problem.gamma(), mixing);
    let snap = problem.snapshot(&init.theta)?;
    theorem2_plan(&c, snap.objective, (&init.w - &snap.w).norm_squared(), target_eps, cap)
}

/// Probe points in the ball of radius `radius`: each uniformly drawn point is
/// followed by a neighbour at relative distance 1e-3, so that difference
/// quotients see both local and global scales.
pub fn theta_probe_grid(d: usize, radius: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = stream_rng(seed, PROBE_STREAM);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = uniform_in_ball(&mut rng, d, radius);
        if out.len() % 2 == 1 {
            let prev: &DVector<f64> = &out[out.len() - 1];
            let mut y = prev + uniform_in_ball(&mut rng, d, NEAR_PAIR_SCALE * radius);
            let n = y.norm();
            if n > radius {
                y *= radius / n;
            }
            out.push(y);
        } else {
            out.push(x);
        }
    }
    out
}

fn uniform_in_ball<R: Rng>(rng: &mut R, d: usize, radius: f64) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        if x.norm_squared() <= 1.0 {
            return x * radius;
        }
    }
}

/// Empirical constants on a probe grid and the declared constants they certify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub c_phi: f64,
    pub c_v: f64,
    pub d_v: f64,
    pub lambda_v: f64,
    pub l_v: f64,
    pub l_phi: f64,
    pub l_h: f64,
    /// Largest difference quotient of ∇J over probe pairs (no safety factor).
    pub l_j: f64,
    /// Largest difference quotient in w of the sample direction (no safety factor).
    pub l_e: f64,
    /// Largest ‖w(θ)‖ on the grid.
    pub w_norm_max: f64,
    pub declared: ModelConstants,
    /// One entry per declared constant contradicted by a probe.
    pub violations: Vec<String>,
}

impl ConstantsReport {
    pub fn certified(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluates every model constant on the θ-grid and, for L_e, on the sample
/// grid with w-pairs drawn from the ball of radius R_w. Declared-constant
/// violations are reported, not raised.
pub fn estimate_model_constants<M: ValueModel>(
    problem: &NonlinearProblem<M>,
    thetas: &[DVector<f64>],
    samples: &[Transition],
    seed: u64,
) -> Result<ConstantsReport> {
    if thetas.len() < 2 {
        return Err(Error::Precondition("at least two probe points are required".into()));
    }
    let n = problem.mdp.n_states();
    let gamma = problem.gamma();
    let declared = problem.declared;
    let inside: Vec<&DVector<f64>> = thetas.iter().filter(|t| t.norm() <= declared.theta_radius * (1.0 + DECLARED_SLACK)).collect();
    if inside.len() < 2 {
        return Err(Error::Precondition("fewer than two probe points lie inside the declared radius".into()));
    }
    struct Eval {
        values: Vec<f64>,
        features: Vec<DVector<f64>>,
        hessians: Vec<nalgebra::DMatrix<f64>>,
        grad: DVector<f64>,
        gram_min: f64,
        w_norm: f64,
    }
    let evals: Vec<Eval> = inside
        .iter()
        .map(|theta| {
            let snap = problem.snapshot(theta)?;
            Ok(Eval {
                values: snap.values.iter().copied().collect(),
                grad: nonlinear_grad(problem, theta)?,
                gram_min: sym_min_eigenvalue(&snap.gram),
                w_norm: snap.w.norm(),
                features: snap.features,
                hessians: snap.hessians,
            })
        })
        .collect::<Result<_>>()?;
    let mut c_phi: f64 = 0.0;
    let mut c_v: f64 = 0.0;
    let mut d_v: f64 = 0.0;
    let mut lambda_v = f64::INFINITY;
    let mut w_norm_max: f64 = 0.0;
    for e in &evals {
        for s in 0..n {
            c_phi = c_phi.max(e.features[s].norm());
            c_v = c_v.max(e.values[s].abs());
            d_v = d_v.max(e.hessians[s].norm());
        }
        lambda_v = lambda_v.min(e.gram_min);
        w_norm_max = w_norm_max.max(e.w_norm);
    }
    let (mut l_v, mut l_phi, mut l_h, mut l_j): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..evals.len() {
        for j in (i + 1)..evals.len() {
            let dist = (inside[i] - inside[j]).norm();
            if dist == 0.0 {
                continue;
            }
            let (a, b) = (&evals[i], &evals[j]);
            for s in 0..n {
                l_v = l_v.max((a.values[s] - b.values[s]).abs() / dist);
                l_phi = l_phi.max((&a.features[s] - &b.features[s]).norm() / dist);
                l_h = l_h.max((&a.hessians[s] - &b.hessians[s]).norm() / dist);
            }
            l_j = l_j.max((&a.grad - &b.grad).norm() / dist);
        }
    }
    let r_w = compute_rw(&declared, problem.mdp.r_max());
    let mut rng = stream_rng(seed, PROBE_STREAM);
    let d = problem.dim();
    let mut l_e: f64 = 0.0;
    for e in &evals {
        for x in samples {
            let delta = x.r + gamma * e.values[x.s_next] - e.values[x.s];
            let phi = &e.features[x.s];
            let phi_next = &e.features[x.s_next];
            let hess = &e.hessians[x.s];
            let direction = |w: &DVector<f64>| -> DVector<f64> {
                let pw = phi.dot(w);
                phi * delta - phi_next * (gamma * pw) - hess * w * (delta - pw)
            };
            let w = uniform_in_ball(&mut rng, d, r_w);
            let far = uniform_in_ball(&mut rng, d, r_w);
            let near = &w + uniform_in_ball(&mut rng, d, NEAR_PAIR_SCALE * r_w);
            let g = direction(&w);
            for other in [far, near] {
                let dist = (&w - &other).norm();
                if dist > 0.0 {
                    l_e = l_e.max((&g - direction(&other)).norm() / dist);
                }
            }
        }
    }
    let mut violations = Vec::new();
    let upper = |name: &str, found: f64, bound: f64, out: &mut Vec<String>| {
        if found > bound * (1.0 + DECLARED_SLACK) + 1e-14 {
            out.push(format!("{name}: probe value {found:e} exceeds declared {bound:e}"));
        }
    };
    upper("C_phi", c_phi, declared.c_phi, &mut violations);
    upper("C_v", c_v, declared.c_v, &mut violations);
    upper("D_v", d_v, declared.d_v, &mut violations);
    upper("L_v", l_v, declared.l_v, &mut violations);
    upper("L_phi", l_phi, declared.l_phi, &mut violations);
    upper("L_h", l_h, declared.l_h, &mut violations);
    if lambda_v < declared.lambda_v * (1.0 - DECLARED_SLACK) - 1e-14 {
        violations.push(format!("lambda_v: probe value {lambda_v:e} is below declared {:e}", declared.lambda_v));
    }
    Ok(ConstantsReport { c_phi, c_v, d_v, lambda_v, l_v, l_phi, l_h, l_j, l_e, w_norm_max, declared, violations })
}
