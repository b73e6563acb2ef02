//! `mixing`, `probe-variance`, `sweep` and `constants`: thin wrappers that
//! return JSON-serializable reports.

use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;
use ttsa_core::analysis::{batch_variance_probe, complexity_sweep, ProbeStart, SweepReport, SweepRunner, SweepTarget, VarianceProbeResult};
use ttsa_core::greedy_gq::{compute_c1, compute_c2, theorem3_plan, theorem3_stepsizes, Theorem3Constants};
use ttsa_core::linear_tdc::{compute_a1, theorem1_plan, theorem1_stepsizes, Theorem1Constants};
use ttsa_core::mdp::{fit_geometric_mixing, induced_chain, stationary_distribution, MixingEstimate};
use ttsa_core::nonlinear_tdc::{theorem2_plan, theorem2_stepsizes, SmoothnessLedger, Theorem2Constants};
use ttsa_core::schedule::{Algorithm, ResourceCap, RunInit};

use crate::config::{ExperimentConfig, MdpSpec, PolicySpec, Problem};
use crate::error::{HarnessError, Result};
use crate::experiment::{calculator_plan, initial_gap, prepare, ConstantsLedger};

#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub stationary: Vec<f64>,
    pub estimate: MixingEstimate,
    /// (1 + (κ−1)ρ)/(1−ρ).
    pub variance_factor: f64,
}

pub fn mixing(mdp: &MdpSpec, policy: &PolicySpec, horizon: usize) -> Result<MixingReport> {
    let model = mdp.build()?;
    let chain = induced_chain(&model, &policy.build(&model)?)?;
    let mu = stationary_distribution(&chain)?;
    let estimate = fit_geometric_mixing(&chain, &mu, horizon)?;
    Ok(MixingReport { stationary: mu.iter().copied().collect(), variance_factor: estimate.variance_factor(), estimate })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub mixing: MixingEstimate,
    pub result: VarianceProbeResult,
    pub all_within_bound: bool,
}

/// Probes the state-indicator map X(s) = e_s (C_x = 1) on the induced chain.
pub fn probe_variance(
    mdp: &MdpSpec,
    policy: &PolicySpec,
    batch_sizes: &[usize],
    reps: usize,
    seed: u64,
    horizon: usize,
) -> Result<ProbeReport> {
    let model = mdp.build()?;
    let chain = induced_chain(&model, &policy.build(&model)?)?;
    let mu = stationary_distribution(&chain)?;
    let mixing = fit_geometric_mixing(&chain, &mu, horizon)?;
    let n = model.n_states();
    let map: Vec<DVector<f64>> = (0..n).map(|s| DVector::from_fn(n, |i, _| if i == s { 1.0 } else { 0.0 })).collect();
    let result = batch_variance_probe(&chain, &mu, &map, 1.0, &mixing, batch_sizes, reps, seed, ProbeStart::Stationary)?;
    Ok(ProbeReport { mixing, all_within_bound: result.all_within_bound(), result })
}

pub fn sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    let spec =
        config.sweep.as_ref().ok_or_else(|| HarnessError::Config("the sweep subcommand needs a `sweep` section in the config".into()))?;
    let prepared = prepare(config)?;
    let init = RunInit::zeros(prepared.problem.dim());
    let target = match (&prepared.problem, &prepared.ledger) {
        (Problem::Linear(p), _) => SweepTarget::Linear { problem: p, mixing: prepared.mixing.clone() },
        (Problem::Nonlinear(p), ConstantsLedger::Nonlinear { report, .. }) => {
            SweepTarget::Nonlinear { problem: p, report, mixing: prepared.mixing.clone() }
        }
        (Problem::GreedyGq(p), ConstantsLedger::GreedyGq { probe, .. }) => {
            SweepTarget::GreedyGq { problem: p, constants: probe, mixing: prepared.mixing.clone() }
        }
        _ => unreachable!("ledger always matches its problem"),
    };
    let runner = SweepRunner {
        target,
        source: spec.source,
        init,
        cap: ResourceCap { max_batch: spec.max_batch, max_samples: spec.max_samples },
        grid_ratio: spec.grid_ratio,
        min_batch: spec.min_batch,
    };
    Ok(complexity_sweep(&runner, &spec.eps, &config.seeds)?)
}

/// Options of the `constants` subcommand.
#[derive(Debug, Clone, Copy)]
pub struct ConstantsOptions {
    pub algorithm: Algorithm,
    pub kappa: f64,
    pub rho: f64,
    pub gamma: f64,
    pub eps: f64,
}

/// Stepsizes, ledger and schedule with every problem constant set to one
/// (κ, ρ and γ as given; J₀ = Δ₀ = ‖w₀ − w(θ₀)‖² = 1).
pub fn constants_all_ones(o: &ConstantsOptions) -> Result<serde_json::Value> {
    let cap = ResourceCap::unbounded();
    Ok(match o.algorithm {
        Algorithm::LinearTdc => {
            let c = Theorem1Constants { lambda1: 1.0, lambda2: 1.0, rho_max: 1.0, r_max: 1.0, r_theta: 1.0, kappa: o.kappa, rho: o.rho };
            let (alpha, beta, alpha_terms, beta_terms) = theorem1_stepsizes(&c);
            json!({
                "algorithm": o.algorithm,
                "constants": c,
                "alpha": alpha, "beta": beta, "alpha_terms": alpha_terms, "beta_terms": beta_terms,
                "a1": compute_a1(&c, alpha, beta),
                "plan": theorem1_plan(&c, 1.0, o.eps, &cap)?,
            })
        }
        Algorithm::NonlinearTdc => {
            let c = Theorem2Constants::all_ones(o.kappa, o.rho, o.gamma);
            let (alpha, beta, alpha_terms, beta_terms) = theorem2_stepsizes(&c);
            json!({
                "algorithm": o.algorithm,
                "constants": c,
                "alpha": alpha, "beta": beta, "alpha_terms": alpha_terms, "beta_terms": beta_terms,
                "ledger": SmoothnessLedger::new(&c, alpha, beta),
                "plan": theorem2_plan(&c, 1.0, 1.0, o.eps, &cap)?,
            })
        }
        Algorithm::GreedyGq => {
            let c = Theorem3Constants::all_ones(o.kappa, o.rho);
            let (alpha, beta, alpha_terms, beta_terms) = theorem3_stepsizes(&c);
            json!({
                "algorithm": o.algorithm,
                "constants": c,
                "alpha": alpha, "beta": beta, "alpha_terms": alpha_terms, "beta_terms": beta_terms,
                "c1": compute_c1(&c, alpha, beta),
                "c2": compute_c2(&c),
                "plan": theorem3_plan(&c, 1.0, 1.0, o.eps, &cap)?,
            })
        }
    })
}

/// Constants, mixing envelope and calculator schedule of a configured problem.
pub fn constants_for_config(config: &ExperimentConfig, eps: f64) -> Result<serde_json::Value> {
    let prepared = prepare(config)?;
    let gap = initial_gap(&prepared, &RunInit::zeros(prepared.problem.dim()))?;
    let (plan, _) = calculator_plan(&prepared, &gap, eps)?;
    Ok(json!({
        "algorithm": config.algorithm,
        "mixing": prepared.mixing,
        "constants": prepared.ledger,
        "initial_gap": gap,
        "plan": plan,
        "assumption_violations": prepared.violations,
    }))
}
