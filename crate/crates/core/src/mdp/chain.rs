use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MdpModel, PolicyTable};
use crate::error::{Error, Result};
use crate::linalg::guarded_solve;

/// Smallest ρ returned when the chain mixes in a single step.
pub const MIXING_RHO_FLOOR: f64 = 1e-6;
/// Residual demanded of the stationary distribution.
const STATIONARY_TOL: f64 = 1e-12;
/// log2 of the power-iteration budget: P^(2^20) covers 10⁶ single steps.
const SQUARINGS: usize = 20;
/// Total-variation values below this are floating-point noise.
const TV_NOISE: f64 = 1e-13;
const KAPPA_MIN: f64 = 1e-12;

/// State-transition matrix p(s'|s) = Σ_a P(s'|s,a) π(a|s) of the chain induced by `policy`.
pub fn induced_chain(mdp: &MdpModel, policy: &PolicyTable) -> Result<DMatrix<f64>> {
    policy.check_shape(mdp)?;
    let n = mdp.n_states();
    let mut chain = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                chain[(s, s2)] += pa * p;
            }
        }
    }
    Ok(chain)
}

/// Stationary distribution of an ergodic chain.
///
/// Power iteration is run by repeated squaring: after k squarings every row of
/// P^(2^k) must agree, otherwise the chain is declared non-ergodic (reducible or
/// periodic, or too slow to mix within 10⁶ steps).
pub fn stationary_distribution(chain: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = chain.nrows();
    if n == 0 || chain.ncols() != n {
        return Err(Error::InvalidModel("chain must be a non-empty square matrix".into()));
    }
    let mut power = chain.clone();
    let mut merged = false;
    for _ in 0..=SQUARINGS {
        if row_spread(&power) <= STATIONARY_TOL {
            merged = true;
            break;
        }
        power = &power * &power;
        for mut row in power.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
    }
    if !merged {
        return Err(Error::NonErgodic(format!("rows of P^t did not merge within 2^{SQUARINGS} steps (spread {:e})", row_spread(&power))));
    }
    let mut mu: DVector<f64> = power.row_mean().transpose();
    mu /= mu.sum();
    for _ in 0..1000 {
        let next = chain.tr_mul(&mu);
        let residual = (&next - &mu).amax();
        let total = next.sum();
        mu = next / total;
        if residual <= STATIONARY_TOL * 0.1 {
            break;
        }
    }
    let residual = (chain.tr_mul(&mu) - &mu).amax();
    if residual > STATIONARY_TOL {
        return Err(Error::NonErgodic(format!("stationary residual {residual:e} above tolerance")));
    }
    Ok(mu)
}

fn row_spread(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| {
            let col = m.column(j);
            col.max() - col.min()
        })
        .fold(0.0, f64::max)
}

/// Geometric envelope d_TV(P^t(s,·), μ) ≤ κρ^t of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub kappa: f64,
    pub rho: f64,
    /// Largest excess of the measured distance over the envelope.
    pub max_residual: f64,
    pub horizon: usize,
    /// Second-largest eigenvalue modulus of the chain.
    pub slem: f64,
}

impl MixingEstimate {
    /// The factor (1 + (κ−1)ρ)/(1−ρ) that multiplies every mini-batch variance bound.
    pub fn variance_factor(&self) -> f64 {
        (1.0 + (self.kappa - 1.0) * self.rho) / (1.0 - self.rho)
    }

    /// Envelope for externally chosen constants (used by calculators and tests).
    pub fn from_constants(kappa: f64, rho: f64) -> Self {
        Self { kappa, rho, max_residual: 0.0, horizon: 0, slem: rho }
    }
}

/// max_s d_TV(P^t(s,·), μ) for t = 0..=horizon.
pub fn total_variation_profile(chain: &DMatrix<f64>, mu: &DVector<f64>, horizon: usize) -> Vec<f64> {
    let n = chain.nrows();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if t > 0 {
            power = &power * chain;
        }
        let worst = (0..n).map(|s| 0.5 * (0..n).map(|j| (power[(s, j)] - mu[j]).abs()).sum::<f64>()).fold(0.0, f64::max);
        out.push(worst);
    }
    out
}

fn second_eigenvalue_modulus(chain: &DMatrix<f64>) -> f64 {
    if chain.nrows() < 2 {
        return 0.0;
    }
    let eig = chain.complex_eigenvalues();
    let mut moduli: Vec<(f64, f64)> = eig.iter().map(|z| ((z - 1.0).norm(), z.norm())).collect();
    moduli.sort_by(|a, b| a.0.total_cmp(&b.0));
    moduli[1..].iter().map(|m| m.1).fold(0.0, f64::max)
}

/// Fits the smallest-ρ geometric envelope over a finite horizon.
///
/// Candidates are ρ ∈ {0.01, …, 0.99}, the second-largest eigenvalue modulus and
/// the floor. A candidate is admissible when d(t)/ρ^t is not still growing at the
/// end of the resolved range (the last t with a measurable distance): its value
/// there may not exceed the maximum over the first half of that range. Without
/// this rule every ρ is admissible on a finite horizon with a huge κ.
pub fn fit_geometric_mixing(chain: &DMatrix<f64>, mu: &DVector<f64>, horizon: usize) -> Result<MixingEstimate> {
    if horizon < 2 {
        return Err(Error::Precondition(format!("mixing horizon {horizon} must be at least 2")));
    }
    let raw = total_variation_profile(chain, mu, horizon);
    let slem = second_eigenvalue_modulus(chain);
    let d: Vec<f64> = raw.iter().map(|&x| if x < TV_NOISE { 0.0 } else { x }).collect();
    let finish = |kappa: f64, rho: f64| {
        let kappa = kappa.max(KAPPA_MIN);
        let max_residual = raw.iter().enumerate().map(|(t, x)| (x - kappa * rho.powi(t as i32)).max(0.0)).fold(0.0, f64::max);
        MixingEstimate { kappa, rho, max_residual, horizon, slem }
    };

    let last = match d.iter().rposition(|&x| x > 0.0) {
        None => return Ok(finish(KAPPA_MIN, MIXING_RHO_FLOOR)),
        Some(0) => return Ok(finish(d[0], MIXING_RHO_FLOOR)),
        Some(t) => t,
    };
    if last == horizon && d[horizon] >= d[0] * (1.0 - 1e-9) {
        return Err(Error::NonMixing);
    }

    let mut candidates: Vec<f64> = (1..=99).map(|k| k as f64 / 100.0).collect();
    candidates.push(slem.clamp(MIXING_RHO_FLOOR, 0.999_999));
    candidates.push(MIXING_RHO_FLOOR);
    candidates.sort_by(f64::total_cmp);

    let half = last / 2;
    for rho in candidates {
        let ratio = |t: usize| d[t] / rho.powi(t as i32);
        let head = (0..=half).map(ratio).fold(0.0, f64::max);
        let tail = (half + 1..=last).map(ratio).fold(0.0, f64::max);
        if tail.is_finite() && tail <= head * (1.0 + 1e-6) {
            let kappa = head.max(tail);
            return Ok(finish(kappa, rho));
        }
    }
    Err(Error::NonMixing)
}

/// V^π = (I − γP_π)^{-1} r_π.
pub fn value_function_exact(mdp: &MdpModel, policy: &PolicyTable) -> Result<DVector<f64>> {
    let p = induced_chain(mdp, policy)?;
    let r = mdp.policy_reward(policy)?;
    let n = mdp.n_states();
    let system = DMatrix::<f64>::identity(n, n) - p * mdp.gamma();
    guarded_solve(&system, &r, "I - gamma P_pi")
}
