#![allow(dead_code)]

use ttsa_core::greedy_gq::{GreedyGqProblem, StateActionFeatureMap};
use ttsa_core::linear_tdc::{LinearFeatureMap, LinearTdcProblem};
use ttsa_core::mdp::{fit_geometric_mixing, random_garnet, stationary_transitions, MdpModel, MixingEstimate, PolicyTable};
use ttsa_core::nonlinear_tdc::{
    estimate_model_constants, theta_probe_grid, ConstantsReport, NonlinearProblem, ReferenceModel, TanhLinearModel,
};
use ttsa_core::rng::stream_rng;
use ttsa_core::schedule::RunTrace;

pub const STATES: usize = 10;
pub const ACTIONS: usize = 2;
pub const DIM: usize = 4;

pub fn garnet() -> MdpModel {
    random_garnet(STATES, ACTIONS, 3, 0, 0.9).unwrap()
}

/// Off-policy evaluation under a uniform behavior (importance ratios ≤ 2).
pub fn linear_problem() -> LinearTdcProblem {
    let target = PolicyTable::random(STATES, ACTIONS, 0.1, &mut stream_rng(1, 20));
    let features = LinearFeatureMap::random(STATES, DIM, 0).unwrap();
    LinearTdcProblem::new(garnet(), PolicyTable::uniform(STATES, ACTIONS), target, features).unwrap()
}

pub fn linear_mixing(p: &LinearTdcProblem) -> MixingEstimate {
    fit_geometric_mixing(&p.exact.behavior_chain, &p.exact.mu, 200).unwrap()
}

pub fn nonlinear_problem() -> NonlinearProblem {
    let model = ReferenceModel::TanhLinear(TanhLinearModel::random(STATES, DIM, 0.5, 1.0, 0).unwrap());
    NonlinearProblem::new(garnet(), PolicyTable::uniform(STATES, ACTIONS), model, 3.0).unwrap()
}

pub fn nonlinear_report(p: &NonlinearProblem) -> ConstantsReport {
    let thetas = theta_probe_grid(DIM, 3.0, 20, 0);
    let mu: Vec<f64> = p.mu.iter().copied().collect();
    let samples = stationary_transitions(&p.mdp, &p.policy, &mu, 1000, 0).unwrap();
    estimate_model_constants(p, &thetas, &samples, 0).unwrap()
}

pub fn gq_problem() -> GreedyGqProblem {
    let features = StateActionFeatureMap::random(STATES, ACTIONS, DIM, 0).unwrap();
    GreedyGqProblem::new(garnet(), PolicyTable::uniform(STATES, ACTIONS), features, 1.0).unwrap()
}

pub fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn mean_final_theta_err(traces: &[RunTrace]) -> f64 {
    mean(traces.iter().map(|t| t.final_record().theta_err_sq.unwrap()))
}

pub fn mean_uniform_output_grad(traces: &[RunTrace]) -> f64 {
    mean(traces.iter().map(|t| t.uniform_output_grad_norm_sq().unwrap()))
}

/// Mean over the last fifth of a series.
pub fn tail_mean(series: &[f64]) -> f64 {
    let start = series.len() - (series.len() / 5).max(1);
    mean(series[start..].iter().copied())
}
