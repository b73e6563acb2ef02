//! `run`: builds the problem, resolves the schedule, runs every seed and writes
//! the trace CSVs, the summary and the manifest.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use ttsa_core::greedy_gq::{run_greedy_gq, theorem3_bound, theorem3_plan, theorem3_stepsizes, GqConstants, Theorem3Constants};
use ttsa_core::linear_tdc::{run_linear_tdc, theorem1_bound, theorem1_plan, theorem1_stepsizes, w_of_theta, Theorem1Constants};
use ttsa_core::mdp::{fit_geometric_mixing, stationary_transitions, MixingEstimate};
use ttsa_core::nonlinear_tdc::{
    estimate_model_constants, run_nonlinear_tdc, theorem2_bound, theorem2_plan, theorem2_stepsizes, theta_probe_grid, ConstantsReport,
    SmoothnessLedger, Theorem2Constants,
};
use ttsa_core::schedule::{Algorithm, ResourceCap, RunEvent, RunInit, TraceRecord, TwoTimescaleConfig};

use crate::config::{ExperimentConfig, Problem, ScheduleSpec};
use crate::error::{HarnessError, Result};
use crate::output::{csv_name, ensure_dir, trace_csv, write_json, write_text};

/// Stationary samples drawn for the nonlinear L_e probe.
pub const PROBE_SAMPLES: usize = 2000;

/// Problem constants feeding the theorem calculators and bounds.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstantsLedger {
    Linear {
        constants: Theorem1Constants,
        /// Largest eigenvalue of AᵀSigma⁻¹A, reported next to the contraction modulus.
        lambda1_literal: f64,
        lambda2_literal: f64,
        theta_star: Vec<f64>,
    },
    Nonlinear {
        constants: Theorem2Constants,
        report: ConstantsReport,
    },
    GreedyGq {
        constants: Theorem3Constants,
        probe: GqConstants,
    },
}

/// A built problem with its mixing envelope and constants.
pub struct Prepared {
    pub problem: Problem,
    pub mixing: MixingEstimate,
    pub ledger: ConstantsLedger,
    /// Declared-constant contradictions found by the probes.
    pub violations: Vec<String>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let problem = config.build_problem()?;
    Ok(match problem {
        Problem::Linear(p) => {
            let mixing = fit_geometric_mixing(&p.exact.behavior_chain, &p.exact.mu, config.mixing_horizon)?;
            let ledger = ConstantsLedger::Linear {
                constants: Theorem1Constants::from_exact(&p.exact, &mixing),
                lambda1_literal: p.exact.lambda1_literal,
                lambda2_literal: p.exact.lambda2_literal,
                theta_star: p.exact.theta_star.iter().copied().collect(),
            };
            Prepared { problem: Problem::Linear(p), mixing, ledger, violations: Vec::new() }
        }
        Problem::Nonlinear(p) => {
            let mixing = fit_geometric_mixing(&p.chain, &p.mu, config.mixing_horizon)?;
            let thetas = theta_probe_grid(p.dim(), p.declared.theta_radius, config.probe_count.max(2), config.probe_seed);
            let mu: Vec<f64> = p.mu.iter().copied().collect();
            let samples = stationary_transitions(&p.mdp, &p.policy, &mu, PROBE_SAMPLES, config.probe_seed)?;
            let report = estimate_model_constants(&p, &thetas, &samples, config.probe_seed)?;
            let constants = Theorem2Constants::from_parts(&p.declared, &report, p.mdp.r_max(), p.gamma(), &mixing);
            let violations = report.violations.clone();
            Prepared { problem: Problem::Nonlinear(p), mixing, ledger: ConstantsLedger::Nonlinear { constants, report }, violations }
        }
        Problem::GreedyGq(p) => {
            let mixing = fit_geometric_mixing(&p.behavior_chain, &p.mu, config.mixing_horizon)?;
            let probe = GqConstants::estimate(&p, config.probe_count.max(2), config.probe_seed)?;
            let constants = Theorem3Constants::from_parts(&probe, p.mdp.r_max(), &mixing);
            let p = p.with_guard(probe.guard());
            Prepared {
                problem: Problem::GreedyGq(p),
                mixing,
                ledger: ConstantsLedger::GreedyGq { constants, probe },
                violations: Vec::new(),
            }
        }
    })
}

/// Initial-condition quantities entering the bounds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InitialGap {
    /// J(θ₀) (nonlinear TDC and Greedy-GQ).
    pub j0: f64,
    /// ‖w₀ − w(θ₀)‖².
    pub w0_err_sq: f64,
    /// ‖θ₀ − θ*‖² + ‖w₀ − w(θ₀)‖² (linear TDC).
    pub delta0: f64,
}

pub fn initial_gap(prepared: &Prepared, init: &RunInit) -> Result<InitialGap> {
    Ok(match &prepared.problem {
        Problem::Linear(p) => {
            let w0 = (&init.w - w_of_theta(&p.exact, &init.theta)).norm_squared();
            let delta0 = (&init.theta - &p.exact.theta_star).norm_squared() + w0;
            InitialGap { j0: ttsa_core::linear_tdc::mspbe(&p.exact, &init.theta), w0_err_sq: w0, delta0 }
        }
        Problem::Nonlinear(p) => {
            let snap = p.snapshot(&init.theta)?;
            let w0 = (&init.w - &snap.w).norm_squared();
            InitialGap { j0: snap.objective, w0_err_sq: w0, delta0: w0 }
        }
        Problem::GreedyGq(p) => {
            let snap = p.snapshot(&init.theta)?;
            let w0 = (&init.w - &snap.w).norm_squared();
            InitialGap { j0: snap.objective, w0_err_sq: w0, delta0: w0 }
        }
    })
}

/// The theorem calculator's schedule at accuracy `eps`, serialized, and (α, β, M, T).
pub fn calculator_plan(prepared: &Prepared, gap: &InitialGap, eps: f64) -> Result<(serde_json::Value, [f64; 4])> {
    let cap = ResourceCap::unbounded();
    Ok(match &prepared.ledger {
        ConstantsLedger::Linear { constants, .. } => {
            let p = theorem1_plan(constants, gap.delta0, eps, &cap)?;
            let out = [p.alpha, p.beta, p.batch_size, p.iterations];
            (serde_json::to_value(p).expect("plan serializes"), out)
        }
        ConstantsLedger::Nonlinear { constants, .. } => {
            let p = theorem2_plan(constants, gap.j0, gap.w0_err_sq, eps, &cap)?;
            let out = [p.ledger.alpha, p.ledger.beta, p.batch_size, p.iterations];
            (serde_json::to_value(p).expect("plan serializes"), out)
        }
        ConstantsLedger::GreedyGq { constants, .. } => {
            let p = theorem3_plan(constants, gap.j0, gap.w0_err_sq, eps, &cap)?;
            let out = [p.alpha, p.beta, p.batch_size, p.iterations];
            (serde_json::to_value(p).expect("plan serializes"), out)
        }
    })
}

/// Whether (α, β, M) meets the theorem's stepsize and batch conditions.
pub fn is_compliant(prepared: &Prepared, gap: &InitialGap, alpha: f64, beta: f64, batch: usize) -> Result<bool> {
    let (a_max, b_max) = match &prepared.ledger {
        ConstantsLedger::Linear { constants, .. } => {
            let (a, b, _, _) = theorem1_stepsizes(constants);
            (a, b)
        }
        ConstantsLedger::Nonlinear { constants, .. } => {
            let (a, b, _, _) = theorem2_stepsizes(constants);
            (a, b)
        }
        ConstantsLedger::GreedyGq { constants, .. } => {
            let (a, b, _, _) = theorem3_stepsizes(constants);
            (a, b)
        }
    };
    let (plan, _) = calculator_plan(prepared, gap, 1.0)?;
    let lower = plan["batch_lower_bound"].as_f64().unwrap_or(f64::INFINITY);
    Ok(alpha <= a_max && beta <= b_max && batch as f64 >= lower)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScheduleSummary {
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSchedule {
    pub schedule: ScheduleSummary,
    /// "explicit" or "auto".
    pub source: &'static str,
    /// Calculator output for auto schedules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<serde_json::Value>,
    /// Whether the stepsizes and batch size satisfy the theorem's conditions.
    pub compliant: bool,
}

pub fn resolve_schedule(config: &ExperimentConfig, prepared: &Prepared, gap: &InitialGap) -> Result<ResolvedSchedule> {
    match &config.schedule {
        ScheduleSpec::Explicit { alpha, beta, batch_size, iterations } => Ok(ResolvedSchedule {
            schedule: ScheduleSummary { alpha: *alpha, beta: *beta, batch_size: *batch_size, iterations: *iterations },
            source: "explicit",
            plan: None,
            compliant: is_compliant(prepared, gap, *alpha, *beta, *batch_size)?,
        }),
        ScheduleSpec::Auto { target_eps, max_batch, max_samples } => {
            let (plan, [alpha, beta, batch, iterations]) = calculator_plan(prepared, gap, *target_eps)?;
            ResourceCap { max_batch: *max_batch, max_samples: *max_samples }.check(batch, iterations)?;
            Ok(ResolvedSchedule {
                schedule: ScheduleSummary { alpha, beta, batch_size: batch as usize, iterations: iterations as usize },
                source: "auto",
                plan: Some(plan),
                compliant: true,
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: usize,
    pub seed: u64,
    pub csv: String,
    pub final_record: TraceRecord,
    pub theta_final: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_index: Option<usize>,
    /// ‖∇J‖² at the drawn output index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_grad_norm_sq: Option<f64>,
    /// ‖∇J‖² averaged over t = 1..T (expectation over the output index).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_output_grad_norm_sq: Option<f64>,
    pub events: Vec<RunEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_final_theta_err_sq: Option<f64>,
    pub mean_final_tracking_err_sq: f64,
    pub mean_final_objective: f64,
    pub mean_final_grad_norm_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_uniform_output_grad_norm_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_output_grad_norm_sq: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// The quantity the bound controls.
    pub quantity: &'static str,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub ttsa_version: &'static str,
    pub resolved: ResolvedSchedule,
    pub seeds: Vec<u64>,
    pub mixing: MixingEstimate,
    pub constants: ConstantsLedger,
    pub initial_gap: InitialGap,
    pub aggregate: Aggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundReport>,
    pub assumption_violations: Vec<String>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub ttsa_version: &'static str,
    pub ttsa_core_version: &'static str,
    pub config: &'a ExperimentConfig,
    pub resolved_schedule: ScheduleSummary,
    pub files: Vec<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

fn evaluate_bound(prepared: &Prepared, gap: &InitialGap, s: &ScheduleSummary, aggregate: &Aggregate) -> Option<BoundReport> {
    if s.iterations == 0 {
        return None;
    }
    let (quantity, measured, bound) = match &prepared.ledger {
        ConstantsLedger::Linear { constants, .. } => (
            "mean final ‖θ_T − θ*‖²",
            aggregate.mean_final_theta_err_sq?,
            theorem1_bound(constants, s.alpha, s.beta, s.batch_size as f64, s.iterations, gap.delta0),
        ),
        ConstantsLedger::Nonlinear { constants, .. } => (
            "mean ‖∇J‖² at a uniform output index",
            aggregate.mean_uniform_output_grad_norm_sq?,
            theorem2_bound(&SmoothnessLedger::new(constants, s.alpha, s.beta), gap.j0, gap.w0_err_sq, s.iterations, s.batch_size as f64),
        ),
        ConstantsLedger::GreedyGq { constants, .. } => (
            "mean stated ‖∇J‖² at a uniform output index",
            aggregate.mean_uniform_output_grad_norm_sq?,
            theorem3_bound(
                constants,
                s.alpha,
                s.beta,
                gap.j0,
                aggregate.mean_final_objective,
                gap.w0_err_sq,
                s.iterations,
                s.batch_size as f64,
            ),
        ),
    };
    Some(BoundReport { quantity, measured, bound, holds: measured <= bound })
}

/// Runs the experiment and writes its artifacts under `config.output_dir`.
///
/// Returns the summary; a probe that contradicts a declared constant turns into
/// an assumption report after all artifacts are written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let dir: PathBuf = ensure_dir(&config.output_dir)?;
    let prepared = prepare(config)?;
    let init = RunInit::zeros(prepared.problem.dim());
    let gap = initial_gap(&prepared, &init)?;
    let resolved = resolve_schedule(config, &prepared, &gap)?;
    let s = resolved.schedule;
    let base = TwoTimescaleConfig::new(s.alpha, s.beta, s.batch_size, s.iterations, config.seeds[0])?;

    let runs: Vec<RunSummary> = config
        .seeds
        .par_iter()
        .enumerate()
        .map(|(run_id, &seed)| {
            let cfg = base.with_seed(seed);
            let trace = match &prepared.problem {
                Problem::Linear(p) => run_linear_tdc(p, &cfg, &init)?,
                Problem::Nonlinear(p) => run_nonlinear_tdc(p, &cfg, &init)?,
                Problem::GreedyGq(p) => run_greedy_gq(p, &cfg, &init)?,
            };
            let csv = csv_name(seed);
            write_text(&dir.join(&csv), &trace_csv(run_id, seed, &trace))?;
            let stationary = trace.algorithm != Algorithm::LinearTdc;
            Ok(RunSummary {
                run_id,
                seed,
                csv,
                final_record: *trace.final_record(),
                theta_final: trace.theta_final.iter().copied().collect(),
                output_index: trace.output_index,
                output_grad_norm_sq: trace.output_grad_norm_sq(),
                uniform_output_grad_norm_sq: trace.uniform_output_grad_norm_sq().filter(|_| stationary),
                events: trace.events,
            })
        })
        .collect::<Result<_>>()?;

    let aggregate = Aggregate {
        mean_final_theta_err_sq: mean_opt(runs.iter().map(|r| r.final_record.theta_err_sq)),
        mean_final_tracking_err_sq: mean(runs.iter().map(|r| r.final_record.tracking_err_sq)),
        mean_final_objective: mean(runs.iter().map(|r| r.final_record.objective)),
        mean_final_grad_norm_sq: mean(runs.iter().map(|r| r.final_record.grad_norm_sq)),
        mean_uniform_output_grad_norm_sq: mean_opt(runs.iter().map(|r| r.uniform_output_grad_norm_sq)),
        mean_output_grad_norm_sq: mean_opt(runs.iter().map(|r| r.output_grad_norm_sq)),
    };
    let summary = Summary {
        algorithm: config.algorithm,
        ttsa_version: env!("CARGO_PKG_VERSION"),
        bound: evaluate_bound(&prepared, &gap, &s, &aggregate),
        resolved,
        seeds: config.seeds.clone(),
        mixing: prepared.mixing.clone(),
        initial_gap: gap,
        aggregate,
        assumption_violations: prepared.violations.clone(),
        constants: prepared.ledger.clone(),
        runs,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let manifest = Manifest {
        ttsa_version: env!("CARGO_PKG_VERSION"),
        ttsa_core_version: ttsa_core::VERSION,
        config,
        resolved_schedule: s,
        files: summary.runs.iter().map(|r| r.csv.clone()).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    if !prepared.violations.is_empty() {
        return Err(HarnessError::AssumptionReport(prepared.violations.join("; ")));
    }
    Ok(summary)
}
