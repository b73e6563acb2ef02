//! Experiment configuration: JSON schema, validation and problem construction.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttsa_core::analysis::ScheduleSource;
use ttsa_core::greedy_gq::{GreedyGqProblem, NextActionMode, StateActionFeatureMap};
use ttsa_core::linear_tdc::{LinearFeatureMap, LinearTdcProblem};
use ttsa_core::mdp::{baird7, random_garnet, twostate, MdpModel, PolicyTable};
use ttsa_core::nonlinear_tdc::{LinearValueModel, NonlinearProblem, ReferenceModel, TanhLinearModel};
use ttsa_core::rng::stream_rng;
use ttsa_core::schedule::Algorithm;

use crate::error::{HarnessError, Result};

/// Stream used to draw random policy tables.
const POLICY_STREAM: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MdpSpec {
    Builtin(BuiltinMdp),
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BuiltinMdp {
    Twostate,
    Baird7,
    RandomGarnet {
        #[serde(default = "default_states")]
        states: usize,
        #[serde(default = "default_actions")]
        actions: usize,
        #[serde(default = "default_branching")]
        branching: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
}

fn default_states() -> usize {
    10
}
fn default_actions() -> usize {
    2
}
fn default_branching() -> usize {
    3
}
fn default_gamma() -> f64 {
    0.9
}

impl MdpSpec {
    /// Parses a command-line name: a builtin (`twostate`, `baird7`, `random-garnet`) or a file path.
    pub fn from_cli(name: &str) -> Self {
        match name {
            "twostate" => MdpSpec::Builtin(BuiltinMdp::Twostate),
            "baird7" => MdpSpec::Builtin(BuiltinMdp::Baird7),
            "random-garnet" => MdpSpec::Builtin(BuiltinMdp::RandomGarnet {
                states: default_states(),
                actions: default_actions(),
                branching: default_branching(),
                seed: 0,
                gamma: default_gamma(),
            }),
            path => MdpSpec::File { file: PathBuf::from(path) },
        }
    }

    pub fn build(&self) -> Result<MdpModel> {
        Ok(match self {
            MdpSpec::Builtin(BuiltinMdp::Twostate) => twostate(),
            MdpSpec::Builtin(BuiltinMdp::Baird7) => baird7(),
            MdpSpec::Builtin(BuiltinMdp::RandomGarnet { states, actions, branching, seed, gamma }) => {
                random_garnet(*states, *actions, *branching, *seed, *gamma)?
            }
            MdpSpec::File { file } => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| HarnessError::Config(format!("cannot read MDP file {}: {e}", file.display())))?;
                MdpModel::from_json_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", file.display())))?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    Uniform,
    /// Random table with every probability at least floor/|A|.
    Random {
        seed: u64,
        floor: f64,
    },
    Table {
        rows: Vec<Vec<f64>>,
    },
}

impl PolicySpec {
    pub fn build(&self, mdp: &MdpModel) -> Result<PolicyTable> {
        let policy = match self {
            PolicySpec::Uniform => PolicyTable::uniform(mdp.n_states(), mdp.n_actions()),
            PolicySpec::Random { seed, floor } => {
                if !(0.0..=1.0).contains(floor) {
                    return Err(HarnessError::Config(format!("policy floor {floor} must lie in [0, 1]")));
                }
                PolicyTable::random(mdp.n_states(), mdp.n_actions(), *floor, &mut stream_rng(*seed, POLICY_STREAM))
            }
            PolicySpec::Table { rows } => PolicyTable::from_rows(rows)?,
        };
        policy.check_shape(mdp)?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureSpec {
    Tabular,
    Random {
        d: usize,
        seed: u64,
    },
    /// One row per state (or per state-action pair for Greedy-GQ).
    Table {
        rows: Vec<Vec<f64>>,
    },
}

impl FeatureSpec {
    pub fn state_features(&self, n_states: usize) -> Result<LinearFeatureMap> {
        Ok(match self {
            FeatureSpec::Tabular => LinearFeatureMap::tabular(n_states),
            FeatureSpec::Random { d, seed } => LinearFeatureMap::random(n_states, *d, *seed)?,
            FeatureSpec::Table { rows } => LinearFeatureMap::from_rows(rows)?,
        })
    }

    pub fn pair_features(&self, n_states: usize, n_actions: usize) -> Result<StateActionFeatureMap> {
        Ok(match self {
            FeatureSpec::Tabular => StateActionFeatureMap::tabular(n_states, n_actions),
            FeatureSpec::Random { d, seed } => StateActionFeatureMap::random(n_states, n_actions, *d, *seed)?,
            FeatureSpec::Table { rows } => StateActionFeatureMap::new(LinearFeatureMap::from_rows(rows)?.matrix().clone(), n_actions)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Linear { features: FeatureSpec },
    TanhLinear { d: usize, c: f64, kappa_lin: f64, base_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Explicit {
        alpha: f64,
        beta: f64,
        batch_size: usize,
        iterations: usize,
    },
    /// The algorithm's theorem calculator at accuracy `target_eps`.
    Auto {
        target_eps: f64,
        #[serde(default = "default_max_batch")]
        max_batch: f64,
        #[serde(default = "default_max_samples")]
        max_samples: f64,
    },
}

fn default_max_batch() -> f64 {
    1e7
}
fn default_max_samples() -> f64 {
    1e9
}

/// Settings of the `sweep` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub eps: Vec<f64>,
    pub source: ScheduleSource,
    #[serde(default = "default_sweep_batch")]
    pub max_batch: f64,
    #[serde(default = "default_sweep_samples")]
    pub max_samples: f64,
    #[serde(default = "default_grid_ratio")]
    pub grid_ratio: f64,
    #[serde(default = "default_min_batch")]
    pub min_batch: usize,
}

fn default_sweep_batch() -> f64 {
    1e5
}
fn default_sweep_samples() -> f64 {
    1e7
}
fn default_grid_ratio() -> f64 {
    std::f64::consts::SQRT_2
}
fn default_min_batch() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("ttsa-out")
}
fn default_theta_radius() -> f64 {
    3.0
}
fn default_probe_count() -> usize {
    40
}
fn default_mixing_horizon() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSpec,
    pub algorithm: Algorithm,
    /// Behavior policy (the evaluated policy for on-policy nonlinear TDC).
    #[serde(default)]
    pub behavior: PolicySpec,
    /// Target policy of linear TDC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PolicySpec>,
    /// State features (linear TDC) or state-action features (Greedy-GQ).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// Radius of the θ-ball on which nonlinear model constants are declared.
    #[serde(default = "default_theta_radius")]
    pub theta_radius: f64,
    /// Softmax temperature of Greedy-GQ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Greedy-GQ update with the sampled next action instead of the expectation.
    #[serde(default)]
    pub sampled_next: bool,
    pub schedule: ScheduleSpec,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed of the constant probes of nonlinear TDC and Greedy-GQ.
    #[serde(default)]
    pub probe_seed: u64,
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    #[serde(default = "default_mixing_horizon")]
    pub mixing_horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// A built problem of one of the three algorithms.
pub enum Problem {
    Linear(LinearTdcProblem),
    Nonlinear(NonlinearProblem),
    GreedyGq(GreedyGqProblem),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Linear(p) => p.features.dim(),
            Problem::Nonlinear(p) => p.dim(),
            Problem::GreedyGq(p) => p.dim(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config, or the config embedded in a manifest written by `run`.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let inner = match value.get("config") {
            Some(config) if value.get("ttsa_version").is_some() => config.clone(),
            _ => value,
        };
        let config: Self = serde_json::from_value(inner).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail("seeds must be distinct (one CSV file per seed)".into());
        }
        if let MdpSpec::File { file } = &self.mdp {
            if !file.is_file() {
                return fail(format!("MDP file {} does not exist", file.display()));
            }
        }
        match &self.schedule {
            ScheduleSpec::Auto { target_eps, .. } if !(*target_eps > 0.0) => {
                return fail(format!("auto schedule needs a positive target_eps, got {target_eps}"));
            }
            ScheduleSpec::Explicit { alpha, beta, batch_size, .. }
                if !(*alpha >= 0.0 && *beta >= 0.0 && alpha <= beta) || *batch_size == 0 =>
            {
                return fail("explicit schedule needs 0 ≤ α ≤ β and a positive batch size".into());
            }
            _ => {}
        }
        match self.algorithm {
            Algorithm::LinearTdc => {
                if self.target.is_none() || self.features.is_none() {
                    return fail("linear-tdc needs `target` and `features`".into());
                }
                if self.model.is_some() || self.tau.is_some() {
                    return fail("linear-tdc does not take `model` or `tau`".into());
                }
            }
            Algorithm::NonlinearTdc => {
                if self.model.is_none() {
                    return fail("nonlinear-tdc needs `model`".into());
                }
                if self.target.is_some() || self.features.is_some() || self.tau.is_some() {
                    return fail("nonlinear-tdc is on-policy and takes its features from `model`".into());
                }
                if !(self.theta_radius > 0.0) {
                    return fail("theta_radius must be positive".into());
                }
            }
            Algorithm::GreedyGq => {
                if self.features.is_none() || self.tau.is_none() {
                    return fail("greedy-gq needs `features` and `tau`".into());
                }
                if self.target.is_some() || self.model.is_some() {
                    return fail("greedy-gq derives its target from θ and takes no `target` or `model`".into());
                }
            }
        }
        if self.sampled_next && self.algorithm != Algorithm::GreedyGq {
            return fail("sampled_next applies to greedy-gq only".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.eps.is_empty() || sweep.eps.iter().any(|e| !(*e > 0.0)) {
                return fail("sweep needs positive accuracies".into());
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let mdp = self.mdp.build()?;
        let behavior = self.behavior.build(&mdp)?;
        let n = mdp.n_states();
        Ok(match self.algorithm {
            Algorithm::LinearTdc => {
                let target = self.target.as_ref().expect("validated").build(&mdp)?;
                let features = self.features.as_ref().expect("validated").state_features(n)?;
                Problem::Linear(LinearTdcProblem::new(mdp, behavior, target, features)?)
            }
            Algorithm::NonlinearTdc => {
                let model = match self.model.as_ref().expect("validated") {
                    ModelSpec::Linear { features } => ReferenceModel::Linear(LinearValueModel { features: features.state_features(n)? }),
                    ModelSpec::TanhLinear { d, c, kappa_lin, base_seed } => {
                        ReferenceModel::TanhLinear(TanhLinearModel::random(n, *d, *c, *kappa_lin, *base_seed)?)
                    }
                };
                Problem::Nonlinear(NonlinearProblem::new(mdp, behavior, model, self.theta_radius)?)
            }
            Algorithm::GreedyGq => {
                let features = self.features.as_ref().expect("validated").pair_features(n, mdp.n_actions())?;
                let mode = if self.sampled_next { NextActionMode::SampledNext } else { NextActionMode::Expected };
                let tau = self.tau.expect("validated");
                Problem::GreedyGq(GreedyGqProblem::new(mdp, behavior, features, tau)?.with_mode(mode))
            }
        })
    }
}
