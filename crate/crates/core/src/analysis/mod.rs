//! Empirical checks of the finite-sample analysis: the mini-batch variance
//! lemma, contraction-rate fits, the tracking-error recursion and
//! sample-complexity sweeps.

mod sweep;

pub use sweep::{complexity_sweep, ScheduleSource, SweepPoint, SweepReport, SweepRunner, SweepSchedule, SweepTarget};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::linear_fit;
use crate::linear_tdc::TrackingCoefficients;
use crate::mdp::{Categorical, MixingEstimate};
use crate::rng::{derive_seed, stream_rng, PROBE_STREAM};
use crate::schedule::RunTrace;

/// Confidence multiplier used by every mean-versus-bound comparison.
pub const CONFIDENCE_SIGMAS: f64 = 3.0;

/// Least-squares fit in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Per-iteration contraction factor exp(slope) for contraction fits.
    pub factor: Option<f64>,
    pub points: usize,
}

/// Fits log y = slope·log x + intercept.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientSignal(format!("log-log fit needs at least two aligned points, got {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InsufficientSignal("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&lx, &ly);
    Ok(RateFit { slope, intercept, r_squared, factor: None, points: x.len() })
}

/// Where each probe window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeStart {
    /// Drawn from the stationary distribution.
    Stationary,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbeResult {
    pub batch_sizes: Vec<usize>,
    /// Mean over repetitions of ‖(1/M)Σ X(s_i) − X̃‖².
    pub mean_sq_dev: Vec<f64>,
    /// Standard error of each mean.
    pub std_err: Vec<f64>,
    /// 8C_x²(1+(κ−1)ρ)/((1−ρ)M).
    pub bound: Vec<f64>,
    /// Whether mean + 3·std_err ≤ bound.
    pub within_bound: Vec<bool>,
    pub reps: usize,
    pub c_x: f64,
    pub kappa: f64,
    pub rho: f64,
    /// log–log fit of the mean deviation against M (None if a mean is zero).
    pub fit: Option<RateFit>,
}

impl VarianceProbeResult {
    pub fn all_within_bound(&self) -> bool {
        self.within_bound.iter().all(|&b| b)
    }
}

/// Measures E‖X(M) − X̃‖² for a state-indexed map X over windows of the chain.
///
/// Matrix-valued maps are passed flattened, which makes the norm Frobenius.
#[allow(clippy::too_many_arguments)]
pub fn batch_variance_probe(
    chain: &DMatrix<f64>,
    mu: &DVector<f64>,
    x_map: &[DVector<f64>],
    c_x: f64,
    mixing: &MixingEstimate,
    batch_sizes: &[usize],
    reps: usize,
    seed: u64,
    start: ProbeStart,
) -> Result<VarianceProbeResult> {
    let n = chain.nrows();
    if mu.len() != n || x_map.len() != n {
        return Err(Error::DimensionMismatch { what: "state-indexed map", expected: n, found: x_map.len() });
    }
    if reps < 2 || batch_sizes.is_empty() || batch_sizes.contains(&0) {
        return Err(Error::Precondition("probe needs at least two repetitions and positive batch sizes".into()));
    }
    if let ProbeStart::Fixed(s) = start {
        if s >= n {
            return Err(Error::Precondition(format!("start state {s} out of range")));
        }
    }
    let width = x_map[0].len();
    let worst = x_map.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if x_map.iter().any(|x| x.len() != width) || worst > c_x * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("map norm {worst} exceeds the claimed bound C_x = {c_x}")));
    }
    let mut mean_x = DVector::zeros(width);
    for (s, x) in x_map.iter().enumerate() {
        mean_x.axpy(mu[s], x, 1.0);
    }
    let steps = Categorical::from_matrix(chain);
    let initial = Categorical::new(mu.as_slice(), n);
    let factor = mixing.variance_factor();

    let mut out = VarianceProbeResult {
        batch_sizes: batch_sizes.to_vec(),
        mean_sq_dev: Vec::new(),
        std_err: Vec::new(),
        bound: Vec::new(),
        within_bound: Vec::new(),
        reps,
        c_x,
        kappa: mixing.kappa,
        rho: mixing.rho,
        fit: None,
    };
    for (mi, &m) in batch_sizes.iter().enumerate() {
        let devs: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(derive_seed(seed, (mi * reps + rep) as u64), PROBE_STREAM);
                let mut s = match start {
                    ProbeStart::Stationary => initial.sample(0, &mut rng),
                    ProbeStart::Fixed(s) => s,
                };
                let mut acc = DVector::zeros(width);
                for i in 0..m {
                    if i > 0 {
                        s = steps.sample(s, &mut rng);
                    }
                    acc += &x_map[s];
                }
                (acc / m as f64 - &mean_x).norm_squared()
            })
            .collect();
        let r = reps as f64;
        let mean = devs.iter().sum::<f64>() / r;
        let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let se = (var / r).sqrt();
        let bound = 8.0 * c_x * c_x * factor / m as f64;
        out.mean_sq_dev.push(mean);
        out.std_err.push(se);
        out.bound.push(bound);
        out.within_bound.push(mean + CONFIDENCE_SIGMAS * se <= bound);
    }
    if out.mean_sq_dev.iter().all(|&d| d > 0.0) && batch_sizes.len() >= 2 {
        let ms: Vec<f64> = batch_sizes.iter().map(|&m| m as f64).collect();
        out.fit = Some(log_log_fit(&ms, &out.mean_sq_dev)?);
    }
    Ok(out)
}

/// Share of the trace used to estimate the noise floor.
pub const FLOOR_TAIL_FRACTION: f64 = 0.2;

/// Multiple of the tail's uncertainty band at which a fit stops using points.
pub const FLOOR_BAND_MARGIN: f64 = 10.0;

/// Fits log(Δ_t − floor) against t after `burn_in`.
///
/// The floor is the mean of the last 20% of the sequence, unless that tail is
/// itself still decaying (its first half exceeds its second half by more than a
/// factor of two), in which case no floor has been reached and none is removed.
/// The floor's uncertainty band is 3 standard deviations of the tail plus the
/// drift between its halves; points are used until Δ_t − floor first drops
/// below `FLOOR_BAND_MARGIN` bands.
pub fn fit_contraction(deltas: &[f64], burn_in: usize) -> Result<RateFit> {
    let len = deltas.len();
    if burn_in + 3 > len {
        return Err(Error::InsufficientSignal(format!("trace of length {len} is too short after burn-in {burn_in}")));
    }
    if deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::InsufficientSignal("trace holds negative or non-finite values".into()));
    }
    let tail_len = ((len as f64 * FLOOR_TAIL_FRACTION).ceil() as usize).max(2);
    let tail = &deltas[len - tail_len..];
    let (first, second) = tail.split_at(tail_len / 2);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let floor = if mean(first) > 2.0 * mean(second) { 0.0 } else { mean(tail) };
    let tail_mean = mean(tail);
    let sd = (tail.iter().map(|x| (x - tail_mean).powi(2)).sum::<f64>() / (tail_len - 1) as f64).sqrt();
    let band = CONFIDENCE_SIGMAS * sd + (mean(first) - mean(second)).abs();
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (t, &d) in deltas.iter().enumerate().skip(burn_in) {
        let excess = d - floor;
        if excess <= FLOOR_BAND_MARGIN * band || excess <= 0.0 {
            break;
        }
        ts.push(t as f64);
        ys.push(excess.ln());
    }
    if ts.len() < 3 {
        return Err(Error::InsufficientSignal(format!("only {} points above the floor {floor:e}", ts.len())));
    }
    let (slope, intercept, r_squared) = linear_fit(&ts, &ys);
    Ok(RateFit { slope, intercept, r_squared, factor: Some(slope.exp()), points: ts.len() })
}

/// Seed average of a per-iteration metric; traces must share their length.
pub fn seed_average(traces: &[RunTrace], metric: impl Fn(&crate::schedule::TraceRecord) -> f64) -> Result<Vec<f64>> {
    let first = traces.first().ok_or_else(|| Error::Precondition("empty ensemble".into()))?;
    let len = first.records.len();
    if traces.iter().any(|t| t.records.len() != len) {
        return Err(Error::Precondition("ensemble traces differ in length".into()));
    }
    let k = traces.len() as f64;
    Ok((0..len).map(|t| traces.iter().map(|tr| metric(&tr.records[t])).sum::<f64>() / k).collect())
}

/// Seed-averaged Lyapunov sequence Δ_t = E‖θ_t − θ*‖² + E‖w_t − w(θ_t)‖².
pub fn lyapunov_series(traces: &[RunTrace]) -> Result<Vec<f64>> {
    seed_average(traces, |r| r.theta_err_sq.unwrap_or(f64::NAN) + r.tracking_err_sq)
}

/// Which tracking recursion is checked; fixes the coupling variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecursionKind {
    /// Coupling through ‖θ_t − θ*‖².
    Linear,
    /// Coupling through ‖∇J(θ_t)‖².
    Nonlinear,
}

/// Minimum ensemble size for a recursion check.
pub const MIN_RECURSION_SEEDS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub kind: RecursionKind,
    pub seeds: usize,
    pub coefficients: TrackingCoefficients,
    pub iterations: usize,
    pub satisfied: usize,
    pub fraction: f64,
    /// Largest lhs − rhs over all steps (non-positive when every step holds).
    pub worst_margin: f64,
    /// Set when fewer than 90% of the steps satisfy the recursion.
    pub flagged: bool,
}

/// Share of steps that must satisfy the recursion for a run to count as compliant.
pub const RECURSION_PASS_FRACTION: f64 = 0.9;

/// Evaluates x_{t+1} ≤ contraction·x_t + coupling·y_t + noise on seed averages,
/// with x the tracking error and y the coupling variable of `kind`.
pub fn tracking_recursion_check(ensemble: &[RunTrace], coefficients: &TrackingCoefficients, kind: RecursionKind) -> Result<TrackingReport> {
    if ensemble.len() < MIN_RECURSION_SEEDS {
        return Err(Error::Precondition(format!("recursion check needs at least {MIN_RECURSION_SEEDS} seeds, got {}", ensemble.len())));
    }
    let x = seed_average(ensemble, |r| r.tracking_err_sq)?;
    let y = match kind {
        RecursionKind::Linear => seed_average(ensemble, |r| r.theta_err_sq.unwrap_or(f64::NAN))?,
        RecursionKind::Nonlinear => seed_average(ensemble, |r| r.grad_norm_sq)?,
    };
    if y.iter().any(|v| v.is_nan()) {
        return Err(Error::Precondition("traces carry no optimum distance".into()));
    }
    let iterations = x.len().saturating_sub(1);
    let mut satisfied = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    for t in 0..iterations {
        let rhs = coefficients.contraction * x[t] + coefficients.coupling * y[t] + coefficients.noise;
        let margin = x[t + 1] - rhs;
        if margin <= 0.0 {
            satisfied += 1;
        }
        worst_margin = worst_margin.max(margin);
    }
    let fraction = if iterations == 0 { 1.0 } else { satisfied as f64 / iterations as f64 };
    Ok(TrackingReport {
        kind,
        seeds: ensemble.len(),
        coefficients: *coefficients,
        iterations,
        satisfied,
        fraction,
        worst_margin: if iterations == 0 { 0.0 } else { worst_margin },
        flagged: fraction < RECURSION_PASS_FRACTION,
    })
}
