use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linear_tdc::{random_rows, LinearFeatureMap};
use crate::mdp::PolicyTable;
use crate::rng::stream_rng;

const FEATURE_STREAM: u64 = 11;

/// State-action features φ(s, a) ∈ R^d with ‖φ(s, a)‖ ≤ 1 and full column rank.
/// Row `s·|A| + a` of the stacked matrix holds φ(s, a).
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionFeatureMap {
    n_actions: usize,
    stacked: LinearFeatureMap,
}

impl StateActionFeatureMap {
    /// `phi` has one row per (s, a) pair in state-major order.
    pub fn new(phi: DMatrix<f64>, n_actions: usize) -> Result<Self> {
        if n_actions == 0 || !phi.nrows().is_multiple_of(n_actions) {
            return Err(Error::DimensionMismatch {
                what: "state-action feature rows",
                expected: n_actions.max(1) * (phi.nrows() / n_actions.max(1)).max(1),
                found: phi.nrows(),
            });
        }
        Ok(Self { n_actions, stacked: LinearFeatureMap::new(phi)? })
    }

    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        Self { n_actions, stacked: LinearFeatureMap::tabular(n_states * n_actions) }
    }

    /// Random rows with norms in [1/2, 1].
    pub fn random(n_states: usize, n_actions: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, FEATURE_STREAM);
        Self::new(random_rows(n_states * n_actions, d, &mut rng), n_actions)
    }

    pub fn n_states(&self) -> usize {
        self.stacked.n_states() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.stacked.dim()
    }

    pub fn phi(&self, s: usize, a: usize) -> &DVector<f64> {
        self.stacked.phi(s * self.n_actions + a)
    }

    /// The stacked matrix viewed as state features of the (s, a) chain.
    pub fn stacked(&self) -> &LinearFeatureMap {
        &self.stacked
    }
}

/// π_θ(a|s) ∝ exp(τφ(s, a)ᵀθ), computed with max-subtraction.
pub fn softmax_policy(features: &StateActionFeatureMap, theta: &DVector<f64>, tau: f64) -> Result<PolicyTable> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("temperature {tau} must be positive and finite")));
    }
    if theta.len() != features.dim() {
        return Err(Error::DimensionMismatch { what: "theta", expected: features.dim(), found: theta.len() });
    }
    let k = features.n_actions();
    let mut probs = Vec::with_capacity(features.n_states() * k);
    let mut logits = vec![0.0; k];
    for s in 0..features.n_states() {
        for (a, l) in logits.iter_mut().enumerate() {
            *l = tau * features.phi(s, a).dot(theta);
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        probs.extend(logits.iter().map(|l| (l - top).exp() / total));
    }
    PolicyTable::new(features.n_states(), k, probs)
}
