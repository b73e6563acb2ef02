use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use ttsa::commands::{self, ConstantsOptions};
use ttsa::config::{ExperimentConfig, MdpSpec, PolicySpec};
use ttsa::error::{HarnessError, Result, EXIT_OK};
use ttsa::output;
use ttsa_core::schedule::Algorithm;

#[derive(Debug, Parser)]
#[command(name = "ttsa", version, about = "Two-timescale TDC / Greedy-GQ experiment harness")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (JSON) or a manifest written by a previous run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for seed-parallel runs (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured seed and write traces, summary and manifest.
    Run,
    /// Stationary distribution and geometric mixing envelope of the behavior chain.
    Mixing {
        #[arg(long, default_value = "twostate")]
        mdp: String,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
    },
    /// Empirical mini-batch variance against the mixing bound.
    ProbeVariance {
        #[arg(long, default_value = "twostate")]
        mdp: String,
        #[arg(long = "M", value_delimiter = ',', default_values_t = [10usize, 100, 1000])]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 400)]
        reps: usize,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
    },
    /// Sample-complexity sweep over the configured ε list.
    Sweep,
    /// Problem constants, stepsizes and calculator schedule.
    Constants {
        #[arg(long, value_parser = parse_algorithm)]
        algo: Option<Algorithm>,
        /// Set every problem constant to one (κ, ρ, γ from the flags).
        #[arg(long)]
        all_ones: bool,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
    },
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    match s {
        "linear-tdc" => Ok(Algorithm::LinearTdc),
        "nonlinear-tdc" => Ok(Algorithm::NonlinearTdc),
        "greedy-gq" => Ok(Algorithm::GreedyGq),
        other => Err(format!("unknown algorithm {other:?} (expected linear-tdc, nonlinear-tdc or greedy-gq)")),
    }
}

fn load_config(global: &Global) -> Result<ExperimentConfig> {
    let path = global.config.as_ref().ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &global.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn emit<T: Serialize>(global: &Global, name: &str, report: &T) -> Result<()> {
    let text = output::to_json(report);
    if let Some(dir) = &global.out {
        output::ensure_dir(dir)?;
        output::write_text(&dir.join(format!("{name}.json")), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Run => {
            let config = load_config(g)?;
            let summary = ttsa::experiment::run_experiment(&config)?;
            eprintln!("wrote {} run(s) to {}", summary.seeds.len(), config.output_dir.display());
            Ok(())
        }
        Command::Mixing { mdp, horizon } => {
            let report = commands::mixing(&MdpSpec::from_cli(mdp), &PolicySpec::Uniform, *horizon)?;
            emit(g, "mixing", &report)
        }
        Command::ProbeVariance { mdp, batch_sizes, reps, horizon } => {
            let report =
                commands::probe_variance(&MdpSpec::from_cli(mdp), &PolicySpec::Uniform, batch_sizes, *reps, g.seed.unwrap_or(0), *horizon)?;
            emit(g, "probe-variance", &report)
        }
        Command::Sweep => {
            let config = load_config(g)?;
            let report = commands::sweep(&config)?;
            let dir = g.out.clone().unwrap_or_else(|| config.output_dir.clone());
            output::ensure_dir(&dir)?;
            output::write_json(&dir.join("sweep.json"), &report)?;
            print!("{}", output::to_json(&report));
            Ok(())
        }
        Command::Constants { algo, all_ones, kappa, rho, gamma, eps } => {
            let report = if *all_ones {
                let algorithm = algo.ok_or_else(|| HarnessError::Config("--all-ones needs --algo".into()))?;
                commands::constants_all_ones(&ConstantsOptions { algorithm, kappa: *kappa, rho: *rho, gamma: *gamma, eps: *eps })?
            } else {
                let config = load_config(g)?;
                if algo.is_some_and(|a| a != config.algorithm) {
                    return Err(HarnessError::Config("--algo disagrees with the config's algorithm".into()));
                }
                commands::constants_for_config(&config, *eps)?
            };
            emit(g, "constants", &report)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            std::process::exit(ttsa::error::EXIT_CONFIG);
        }
    }
    let code = match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
