use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_min_eigenvalue;
use crate::linear_tdc::{random_rows, LinearFeatureMap};
use crate::rng::stream_rng;

const BASE_FEATURE_STREAM: u64 = 13;
/// max_z |d/dz sech²z| = max_z |2 tanh z sech²z| = 4/(3√3).
const SECH2_SLOPE: f64 = 0.769_800_358_919_501;

/// Regularity constants of a value model over a θ-ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    /// Bound on ‖φ_θ(s)‖.
    pub c_phi: f64,
    /// Bound on |v(s, θ)|.
    pub c_v: f64,
    /// Bound on ‖∇²v(s, θ)‖_F.
    pub d_v: f64,
    /// Lipschitz modulus of v in θ.
    pub l_v: f64,
    /// Lipschitz modulus of φ_θ in θ.
    pub l_phi: f64,
    /// Lipschitz modulus of the Hessian in θ.
    pub l_h: f64,
    /// Floor on the smallest eigenvalue of E_μ[φ_θφ_θᵀ].
    pub lambda_v: f64,
    /// Radius of the θ-ball over which the constants hold.
    pub theta_radius: f64,
}

impl ModelConstants {
    /// Every constant set to one (radius one).
    pub fn all_ones() -> Self {
        Self { c_phi: 1.0, c_v: 1.0, d_v: 1.0, l_v: 1.0, l_phi: 1.0, l_h: 1.0, lambda_v: 1.0, theta_radius: 1.0 }
    }
}

/// A smooth parametric value function v(s, θ) with analytic derivatives.
/// Implementations must be pure.
pub trait ValueModel: Send + Sync {
    fn dim(&self) -> usize;
    fn n_states(&self) -> usize;
    fn value(&self, s: usize, theta: &DVector<f64>) -> f64;
    /// φ_θ(s) = ∇_θ v(s, θ).
    fn gradient(&self, s: usize, theta: &DVector<f64>) -> DVector<f64>;
    /// ∇²_θ v(s, θ).
    fn hessian(&self, s: usize, theta: &DVector<f64>) -> DMatrix<f64>;
    /// Declared constants over the ball ‖θ‖ ≤ `theta_radius`, with μ the sampling distribution.
    fn declared_constants(&self, mu: &DVector<f64>, theta_radius: f64) -> ModelConstants;
}

/// v(s, θ) = φ(s)ᵀθ.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearValueModel {
    pub features: LinearFeatureMap,
}

impl ValueModel for LinearValueModel {
    fn dim(&self) -> usize {
        self.features.dim()
    }

    fn n_states(&self) -> usize {
        self.features.n_states()
    }

    fn value(&self, s: usize, theta: &DVector<f64>) -> f64 {
        self.features.phi(s).dot(theta)
    }

    fn gradient(&self, s: usize, _theta: &DVector<f64>) -> DVector<f64> {
        self.features.phi(s).clone()
    }

    fn hessian(&self, _s: usize, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn declared_constants(&self, mu: &DVector<f64>, theta_radius: f64) -> ModelConstants {
        let c_phi = max_row_norm(&self.features);
        ModelConstants {
            c_phi,
            c_v: c_phi * theta_radius,
            d_v: 0.0,
            l_v: c_phi,
            l_phi: 0.0,
            l_h: 0.0,
            lambda_v: weighted_gram_floor(&self.features, mu),
            theta_radius,
        }
    }
}

/// v(s, θ) = c·tanh(ψ(s)ᵀθ) + κ·ψ(s)ᵀθ over fixed base features ψ.
///
/// With κ > max(0, −c) the gradient ψ(s)(c·sech²(ψᵀθ) + κ) never vanishes, so the
/// feature Gram matrix stays uniformly positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhLinearModel {
    pub base: LinearFeatureMap,
    pub c: f64,
    pub kappa_lin: f64,
}

impl TanhLinearModel {
    pub fn new(base: LinearFeatureMap, c: f64, kappa_lin: f64) -> Result<Self> {
        if !(kappa_lin > 0.0 && kappa_lin > -c) || !c.is_finite() {
            return Err(Error::InvalidModel(format!("tanh-linear model needs κ_lin > max(0, −c) (c = {c}, κ_lin = {kappa_lin})")));
        }
        Ok(Self { base, c, kappa_lin })
    }

    /// Base features drawn from `base_seed` (rows of norm in [1/2, 1]).
    pub fn random(n_states: usize, d: usize, c: f64, kappa_lin: f64, base_seed: u64) -> Result<Self> {
        let mut rng = stream_rng(base_seed, BASE_FEATURE_STREAM);
        let base = LinearFeatureMap::new(random_rows(n_states, d, &mut rng))?;
        Self::new(base, c, kappa_lin)
    }

    fn z(&self, s: usize, theta: &DVector<f64>) -> f64 {
        self.base.phi(s).dot(theta)
    }
}

impl ValueModel for TanhLinearModel {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn n_states(&self) -> usize {
        self.base.n_states()
    }

    fn value(&self, s: usize, theta: &DVector<f64>) -> f64 {
        let z = self.z(s, theta);
        self.c * z.tanh() + self.kappa_lin * z
    }

    fn gradient(&self, s: usize, theta: &DVector<f64>) -> DVector<f64> {
        let t = self.z(s, theta).tanh();
        self.base.phi(s) * (self.c * (1.0 - t * t) + self.kappa_lin)
    }

    fn hessian(&self, s: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        let t = self.z(s, theta).tanh();
        let psi = self.base.phi(s);
        (psi * psi.transpose()) * (-2.0 * self.c * t * (1.0 - t * t))
    }

    fn declared_constants(&self, mu: &DVector<f64>, theta_radius: f64) -> ModelConstants {
        let p = max_row_norm(&self.base);
        let c = self.c.abs();
        let c_phi = (c + self.kappa_lin) * p;
        let slope = (self.kappa_lin - (-self.c).max(0.0)).max(0.0);
        ModelConstants {
            c_phi,
            c_v: c + self.kappa_lin * p * theta_radius,
            d_v: c * SECH2_SLOPE * p * p,
            l_v: c_phi,
            l_phi: c * SECH2_SLOPE * p * p,
            l_h: 2.0 * c * p * p * p,
            lambda_v: slope * slope * weighted_gram_floor(&self.base, mu),
            theta_radius,
        }
    }
}

/// The models selectable from a harness configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceModel {
    Linear(LinearValueModel),
    TanhLinear(TanhLinearModel),
}

impl ValueModel for ReferenceModel {
    fn dim(&self) -> usize {
        match self {
            Self::Linear(m) => m.dim(),
            Self::TanhLinear(m) => m.dim(),
        }
    }

    fn n_states(&self) -> usize {
        match self {
            Self::Linear(m) => m.n_states(),
            Self::TanhLinear(m) => m.n_states(),
        }
    }

    fn value(&self, s: usize, theta: &DVector<f64>) -> f64 {
        match self {
            Self::Linear(m) => m.value(s, theta),
            Self::TanhLinear(m) => m.value(s, theta),
        }
    }

    fn gradient(&self, s: usize, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Linear(m) => m.gradient(s, theta),
            Self::TanhLinear(m) => m.gradient(s, theta),
        }
    }

    fn hessian(&self, s: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Self::Linear(m) => m.hessian(s, theta),
            Self::TanhLinear(m) => m.hessian(s, theta),
        }
    }

    fn declared_constants(&self, mu: &DVector<f64>, theta_radius: f64) -> ModelConstants {
        match self {
            Self::Linear(m) => m.declared_constants(mu, theta_radius),
            Self::TanhLinear(m) => m.declared_constants(mu, theta_radius),
        }
    }
}

fn max_row_norm(features: &LinearFeatureMap) -> f64 {
    (0..features.n_states()).map(|s| features.phi(s).norm()).fold(0.0, f64::max)
}

fn weighted_gram_floor(features: &LinearFeatureMap, mu: &DVector<f64>) -> f64 {
    let d = features.dim();
    let mut gram = DMatrix::zeros(d, d);
    for s in 0..features.n_states() {
        let phi = features.phi(s);
        gram += (phi * phi.transpose()) * mu[s];
    }
    sym_min_eigenvalue(&gram)
}
