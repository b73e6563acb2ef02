use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

const FEATURE_STREAM: u64 = 11;
const NORM_TOL: f64 = 1e-12;
const MIN_SINGULAR_VALUE: f64 = 1e-10;

/// State features Φ (|S| × d) with ‖φ(s)‖ ≤ 1 and linearly independent columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeatureMap {
    phi: DMatrix<f64>,
    rows: Vec<DVector<f64>>,
}

impl LinearFeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::InvalidModel("feature matrix must be non-empty".into()));
        }
        for (s, row) in phi.row_iter().enumerate() {
            let norm = row.norm();
            if !(norm <= 1.0 + NORM_TOL) {
                return Err(Error::InvalidModel(format!("feature row {s} has norm {norm} > 1")));
            }
        }
        if phi.ncols() > phi.nrows() || phi.singular_values().min() <= MIN_SINGULAR_VALUE {
            return Err(Error::InvalidModel("feature columns are not linearly independent".into()));
        }
        let rows = phi.row_iter().map(|r| r.transpose()).collect();
        Ok(Self { phi, rows })
    }

    /// Identity features φ(s) = e_s.
    pub fn tabular(n_states: usize) -> Self {
        Self::new(DMatrix::identity(n_states, n_states)).expect("identity features are valid")
    }

    /// Random features with rows of norm drawn uniformly from [1/2, 1].
    pub fn random(n_states: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, FEATURE_STREAM);
        let phi = random_rows(n_states, d, &mut rng);
        Self::new(phi)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidModel("feature rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_row_slice(n, d, &rows.concat()))
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn phi(&self, s: usize) -> &DVector<f64> {
        &self.rows[s]
    }
}

/// Rows with random direction and norm uniform in [1/2, 1].
pub(crate) fn random_rows<R: Rng>(n: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut phi = DMatrix::zeros(n, d);
    for s in 0..n {
        let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let scale = rng.gen_range(0.5..=1.0) / norm;
        for (j, x) in raw.iter().enumerate() {
            phi[(s, j)] = x * scale;
        }
    }
    phi
}
