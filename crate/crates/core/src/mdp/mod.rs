//! Finite MDPs, policy tables, stationary distributions, mixing envelopes and
//! seeded Markovian trajectories.

mod builtin;
mod chain;
mod io;
mod trajectory;

pub use builtin::{baird7, random_garnet, two_state_chain, twostate};
pub use chain::{
    fit_geometric_mixing, induced_chain, stationary_distribution, total_variation_profile, value_function_exact, MixingEstimate,
    MIXING_RHO_FLOOR,
};
pub use io::MdpDocument;
pub use trajectory::{sample_trajectory, stationary_transitions, Categorical, StartState, TrajectoryStream, Transition};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on probability rows.
pub const ROW_TOL: f64 = 1e-12;

/// Finite MDP with transition and reward tensors stored row-major as `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    r_max: f64,
    name: Option<String>,
}

impl MdpModel {
    /// Builds a model from flat `[s][a][s']` tensors. The reward bound is the largest |r|.
    pub fn new(n_states: usize, n_actions: usize, transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("need at least one state and one action".into()));
        }
        let len = n_states * n_actions * n_states;
        if transition.len() != len {
            return Err(Error::DimensionMismatch { what: "transition tensor", expected: len, found: transition.len() });
        }
        if reward.len() != len {
            return Err(Error::DimensionMismatch { what: "reward tensor", expected: len, found: reward.len() });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("discount factor {gamma} must lie in (0, 1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..(s * n_actions + a + 1) * n_states];
                check_probability_row(row).map_err(|msg| Error::InvalidModel(format!("transition row (s={s}, a={a}): {msg}")))?;
            }
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite reward {r}")));
        }
        let r_max = reward.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        Ok(Self { n_states, n_actions, transition, reward, gamma, r_max, name: None })
    }

    /// Declares a reward bound larger than the observed maximum |r|.
    pub fn with_reward_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound >= self.r_max) {
            return Err(Error::InvalidModel(format!("reward bound {bound} is below the largest reward magnitude {}", self.r_max)));
        }
        self.r_max = bound;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn r(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// Next-state distribution for the pair (s, a).
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.reward[start..start + self.n_states]
    }

    /// Expected one-step reward of the pair (s, a).
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transition_row(s, a).iter().zip(self.reward_row(s, a)).map(|(p, r)| p * r).sum()
    }

    /// Expected one-step reward per state under `policy`.
    pub fn policy_reward(&self, policy: &PolicyTable) -> Result<DVector<f64>> {
        policy.check_shape(self)?;
        Ok(DVector::from_fn(self.n_states, |s, _| (0..self.n_actions).map(|a| policy.prob(s, a) * self.expected_reward(s, a)).sum()))
    }

    /// A copy of this model with every reward set to zero.
    pub fn with_zero_rewards(&self) -> Self {
        let mut m = self.clone();
        m.reward.iter_mut().for_each(|r| *r = 0.0);
        m.r_max = 0.0;
        m
    }

    pub(crate) fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    pub(crate) fn reward_tensor(&self) -> &[f64] {
        &self.reward
    }
}

fn check_probability_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(format!("entry {p} is not a probability"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Stationary policy π(a|s) stored as an `n_states × n_actions` row-major table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch { what: "policy table", expected: n_states * n_actions, found: probs.len() });
        }
        for s in 0..n_states {
            check_probability_row(&probs[s * n_actions..(s + 1) * n_actions])
                .map_err(|msg| Error::InvalidModel(format!("policy row {s}: {msg}")))?;
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidModel("policy rows have unequal lengths".into()));
        }
        Self::new(n_states, n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    /// Random policy with every probability at least `floor / n_actions` of the mass.
    pub fn random<R: Rng>(n_states: usize, n_actions: usize, floor: f64, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|x| floor / n_actions as f64 + (1.0 - floor) * x / total));
        }
        normalize_rows(&mut probs, n_actions);
        Self { n_states, n_actions, probs }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.row(s).to_vec()).collect()
    }

    pub fn check_shape(&self, mdp: &MdpModel) -> Result<()> {
        if self.n_states != mdp.n_states() {
            return Err(Error::DimensionMismatch { what: "policy states", expected: mdp.n_states(), found: self.n_states });
        }
        if self.n_actions != mdp.n_actions() {
            return Err(Error::DimensionMismatch { what: "policy actions", expected: mdp.n_actions(), found: self.n_actions });
        }
        Ok(())
    }

    /// Importance ratio π(a|s)/π_b(a|s) with `self` as the target.
    pub fn ratio(&self, behavior: &PolicyTable, s: usize, a: usize) -> Result<f64> {
        let b = behavior.prob(s, a);
        let p = self.prob(s, a);
        if b > 0.0 {
            Ok(p / b)
        } else if p == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Support { state: s, action: a })
        }
    }

    /// Largest importance ratio of `self` against `behavior`; errors when support is missing.
    pub fn max_ratio(&self, behavior: &PolicyTable) -> Result<f64> {
        let mut max = 0.0f64;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                max = max.max(self.ratio(behavior, s, a)?);
            }
        }
        Ok(max)
    }
}

fn normalize_rows(probs: &mut [f64], width: usize) {
    for row in probs.chunks_mut(width) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
}

/// Row-stochastic matrix helper used by tests and builders.
pub fn is_row_stochastic(m: &DMatrix<f64>) -> bool {
    m.row_iter().all(|r| r.iter().all(|p| *p >= 0.0) && (r.sum() - 1.0).abs() <= ROW_TOL)
}

#[cfg(test)]
mod tests;
