//! Sample-complexity sweeps: for each target accuracy, the smallest measured
//! T·M (over a geometric batch grid and the iterations of each run) at which
//! the seed-averaged ε-criterion holds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{log_log_fit, seed_average, RateFit};
use crate::error::{Error, Result};
use crate::greedy_gq::{run_greedy_gq_ensemble, theorem3_config, GqConstants, GreedyGqProblem};
use crate::linear_tdc::{run_linear_ensemble, theorem1_config, LinearTdcProblem};
use crate::mdp::MixingEstimate;
use crate::nonlinear_tdc::{run_nonlinear_ensemble, theorem2_config, ConstantsReport, NonlinearProblem};
use crate::schedule::{Algorithm, ResourceCap, RunInit, RunTrace, TwoTimescaleConfig};

/// The problem being swept, with what its calculator needs.
pub enum SweepTarget<'a> {
    Linear { problem: &'a LinearTdcProblem, mixing: MixingEstimate },
    Nonlinear { problem: &'a NonlinearProblem, report: &'a ConstantsReport, mixing: MixingEstimate },
    GreedyGq { problem: &'a GreedyGqProblem, constants: &'a GqConstants, mixing: MixingEstimate },
}

impl SweepTarget<'_> {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            SweepTarget::Linear { .. } => Algorithm::LinearTdc,
            SweepTarget::Nonlinear { .. } => Algorithm::NonlinearTdc,
            SweepTarget::GreedyGq { .. } => Algorithm::GreedyGq,
        }
    }
}

/// Where the per-ε search limits (α, β, largest M, largest T) come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleSource {
    /// The algorithm's theorem calculator.
    Calculator,
    /// Fixed stepsizes; M ≤ ⌈batch_scale/ε⌉ and T ≤ ⌈horizon_scale·(1 + ln(1/ε))⌉
    /// for linear TDC or ⌈horizon_scale/ε⌉ for the stationarity criteria.
    Practical { alpha: f64, beta: f64, batch_scale: f64, horizon_scale: f64 },
}

/// Search limits at one accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub alpha: f64,
    pub beta: f64,
    /// Batch size proposed by the source (before the resource cap).
    pub batch: f64,
    /// Iterations proposed by the source (before the resource cap).
    pub iterations: f64,
    /// Whether the cap shrank the searched region.
    pub clamped: bool,
}

pub struct SweepRunner<'a> {
    pub target: SweepTarget<'a>,
    pub source: ScheduleSource,
    pub init: RunInit,
    /// Per-run limits on M and T·M.
    pub cap: ResourceCap,
    /// Ratio between consecutive batch sizes of the grid.
    pub grid_ratio: f64,
    pub min_batch: usize,
}

impl SweepRunner<'_> {
    pub fn schedule(&self, eps: f64) -> Result<SweepSchedule> {
        let unbounded = ResourceCap::unbounded();
        let (alpha, beta, batch, iterations) = match (&self.source, &self.target) {
            (ScheduleSource::Calculator, SweepTarget::Linear { problem, mixing }) => {
                let p = theorem1_config(&problem.exact, mixing, eps, &self.init, &unbounded)?;
                (p.alpha, p.beta, p.batch_size, p.iterations)
            }
            (ScheduleSource::Calculator, SweepTarget::Nonlinear { problem, report, mixing }) => {
                let p = theorem2_config(problem, report, mixing, eps, &self.init, &unbounded)?;
                (p.ledger.alpha, p.ledger.beta, p.batch_size, p.iterations)
            }
            (ScheduleSource::Calculator, SweepTarget::GreedyGq { problem, constants, mixing }) => {
                let p = theorem3_config(problem, constants, mixing, eps, &self.init, &unbounded)?;
                (p.alpha, p.beta, p.batch_size, p.iterations)
            }
            (ScheduleSource::Practical { alpha, beta, batch_scale, horizon_scale }, target) => {
                let horizon = match target {
                    SweepTarget::Linear { .. } => horizon_scale * (1.0 + (1.0 / eps).ln()),
                    _ => horizon_scale / eps,
                };
                (*alpha, *beta, (batch_scale / eps).ceil(), horizon.ceil())
            }
        };
        let clamped = !(batch <= self.cap.max_batch && batch * iterations <= self.cap.max_samples);
        Ok(SweepSchedule { alpha, beta, batch, iterations, clamped })
    }

    fn ensemble(&self, config: &TwoTimescaleConfig, seeds: &[u64]) -> Result<Vec<RunTrace>> {
        match &self.target {
            SweepTarget::Linear { problem, .. } => run_linear_ensemble(problem, config, &self.init, seeds),
            SweepTarget::Nonlinear { problem, .. } => run_nonlinear_ensemble(problem, config, &self.init, seeds),
            SweepTarget::GreedyGq { problem, .. } => run_greedy_gq_ensemble(problem, config, &self.init, seeds),
        }
    }

    /// Seed-averaged ε-criterion metric for every horizon t = 0..=T of one run:
    /// the final-iterate ‖θ_t − θ*‖² for linear TDC, and otherwise the expectation
    /// of ‖∇J‖² at an output index uniform on {1, …, t}.
    pub fn criterion_curve(&self, config: &TwoTimescaleConfig, seeds: &[u64]) -> Result<Vec<f64>> {
        let traces = self.ensemble(config, seeds)?;
        match self.target {
            SweepTarget::Linear { .. } => seed_average(&traces, |r| r.theta_err_sq.unwrap_or(f64::NAN)),
            _ => {
                let grads = seed_average(&traces, |r| r.grad_norm_sq)?;
                let mut out = Vec::with_capacity(grads.len());
                let mut running = 0.0;
                for (t, g) in grads.iter().enumerate() {
                    if t == 0 {
                        out.push(*g);
                    } else {
                        running += g;
                        out.push(running / t as f64);
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub schedule: SweepSchedule,
    pub reached: bool,
    pub batch: Option<usize>,
    pub iterations: Option<usize>,
    /// Smallest measured T·M achieving the criterion.
    pub samples: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub algorithm: Algorithm,
    pub source: ScheduleSource,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
    /// Fit of log T·M against log(1/ε) over the reached points.
    pub fit: Option<RateFit>,
    /// Set when some ε was not reached within the searched region.
    pub partial: bool,
    /// Whether smaller ε never needed fewer samples among reached points.
    pub monotone: bool,
}

/// Geometric batch grid from `min` to `max` (inclusive) plus the extra values.
fn batch_grid(min: usize, max: usize, ratio: f64, extra: &[usize]) -> Vec<usize> {
    let mut grid: Vec<usize> = Vec::new();
    let mut m = min.max(1) as f64;
    while m.round() as usize <= max {
        grid.push(m.round() as usize);
        m *= ratio;
    }
    grid.extend(extra.iter().copied().filter(|&e| e >= min && e <= max));
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Runs the sweep. Runs are shared across ε: one ensemble per (α, β, M) with the
/// longest horizon any ε allows at that M, so the measured T·M is monotone in ε
/// whenever the stepsizes do not depend on ε.
pub fn complexity_sweep(runner: &SweepRunner, eps_list: &[f64], seeds: &[u64]) -> Result<SweepReport> {
    if eps_list.is_empty() || seeds.is_empty() {
        return Err(Error::Precondition("sweep needs at least one accuracy and one seed".into()));
    }
    if !(runner.grid_ratio > 1.0) {
        return Err(Error::InvalidConfig(format!("batch grid ratio {} must exceed 1", runner.grid_ratio)));
    }
    let schedules: Vec<SweepSchedule> = eps_list.iter().map(|&e| runner.schedule(e)).collect::<Result<_>>()?;
    let limits: Vec<(usize, usize)> = schedules
        .iter()
        .map(|s| {
            let m = s.batch.min(runner.cap.max_batch).max(1.0);
            let t = s.iterations.min((runner.cap.max_samples / m).floor()).max(0.0);
            (m as usize, t as usize)
        })
        .collect();

    // (α bits, β bits) -> M -> longest useful horizon.
    let mut plan: BTreeMap<(u64, u64), BTreeMap<usize, usize>> = BTreeMap::new();
    for (s, &(m_max, t_max)) in schedules.iter().zip(&limits) {
        let extra = [m_max];
        for m in batch_grid(runner.min_batch, m_max, runner.grid_ratio, &extra) {
            let horizon = plan.entry((s.alpha.to_bits(), s.beta.to_bits())).or_default().entry(m).or_insert(0);
            let t_cap = ((runner.cap.max_samples / m as f64).floor() as usize).min(t_max.max(*horizon));
            *horizon = t_cap;
        }
    }
    let mut curves: BTreeMap<(u64, u64, usize), Vec<f64>> = BTreeMap::new();
    for (&(a, b), by_m) in &plan {
        for (&m, &t) in by_m {
            if t == 0 {
                continue;
            }
            let config = TwoTimescaleConfig::new(f64::from_bits(a), f64::from_bits(b), m, t, seeds[0])?;
            curves.insert((a, b, m), runner.criterion_curve(&config, seeds)?);
        }
    }

    let mut points = Vec::with_capacity(eps_list.len());
    for ((&eps, s), &(m_max, t_max)) in eps_list.iter().zip(&schedules).zip(&limits) {
        let key = (s.alpha.to_bits(), s.beta.to_bits());
        let mut best: Option<(usize, usize)> = None;
        for (&(a, b, m), curve) in curves.range((key.0, key.1, 0)..=(key.0, key.1, m_max)) {
            debug_assert_eq!((a, b), key);
            let hit = curve.iter().enumerate().skip(1).take(t_max).find(|(_, &v)| v <= eps).map(|(t, _)| t);
            if let Some(t) = hit {
                if best.is_none_or(|(bm, bt)| t * m < bm * bt) {
                    best = Some((m, t));
                }
            }
        }
        points.push(SweepPoint {
            eps,
            schedule: *s,
            reached: best.is_some(),
            batch: best.map(|b| b.0),
            iterations: best.map(|b| b.1),
            samples: best.map(|(m, t)| (m * t) as f64),
        });
    }
    let reached: Vec<&SweepPoint> = points.iter().filter(|p| p.reached).collect();
    let fit = if reached.len() >= 2 {
        let x: Vec<f64> = reached.iter().map(|p| 1.0 / p.eps).collect();
        let y: Vec<f64> = reached.iter().map(|p| p.samples.unwrap_or(f64::NAN)).collect();
        Some(log_log_fit(&x, &y)?)
    } else {
        None
    };
    let mut sorted = reached.clone();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let monotone = sorted.windows(2).all(|w| w[1].samples >= w[0].samples);
    Ok(SweepReport {
        algorithm: runner.target.algorithm(),
        source: runner.source,
        seeds: seeds.to_vec(),
        partial: reached.len() < points.len(),
        points,
        fit,
        monotone,
    })
}
