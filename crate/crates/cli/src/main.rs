//! `tvpursuit` command-line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use tvpursuit::harness::solve::{run_solve, SolveRequest};
use tvpursuit::harness::{self, Config, ExperimentConfig, ExperimentKind};
use tvpursuit::Error;

const EXIT_SOLVER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "tvpursuit", version, about = "Joint recovery of tree-related sparse signals")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// key=value settings file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output CSV (shorthand for --set output=PATH)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Recovery probability against non-root sample count
    PhaseTransition(Common),
    /// Distributed ADMM error traces
    Convergence(Common),
    /// l1 error of the noisy estimators against the number of agents
    Noisy(Common),
    /// Tiled unmixing on synthetic spectra
    Unmix(Common),
    /// Brute-force oracle battery
    Verify(Common),
    /// Solve one instance and print a summary row
    Solve(Common),
}

fn load(common: &Common) -> tvpursuit::Result<Config> {
    let mut c = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &common.set {
        c.set(kv)?;
    }
    if let Some(p) = &common.output {
        c.insert("output", p.display());
    }
    Ok(c)
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::BudgetExceeded(_) | Error::InvalidSize(_) => EXIT_CONFIG,
        Error::DimensionExhausted { .. } | Error::NotATree(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

fn experiment(kind: ExperimentKind, common: &Common) -> Result<(), u8> {
    let c = load(common).map_err(|e| {
        error!("{e}");
        EXIT_CONFIG
    })?;
    let cfg = ExperimentConfig::from_config(kind, &c).map_err(|e| {
        error!("{e}");
        EXIT_CONFIG
    })?;
    let out = harness::run(&cfg).map_err(|e| {
        error!("{e}");
        code_for(&e)
    })?;
    match &cfg.output {
        Some(p) => {
            let written = out.write(p).map_err(|e| {
                error!("{e}");
                EXIT_SOLVER
            })?;
            for w in written {
                info!("wrote {}", w.display());
            }
        }
        None => print!("{}", out.main.render()),
    }
    if kind == ExperimentKind::VerifySuite && !out.passed {
        error!("verification failed");
        return Err(EXIT_VERIFY);
    }
    if !out.aborted.is_empty() {
        return Err(EXIT_SOLVER);
    }
    Ok(())
}

fn solve(common: &Common) -> Result<(), u8> {
    let c = load(common).map_err(|e| {
        error!("{e}");
        EXIT_CONFIG
    })?;
    let req = SolveRequest::from_config(&c).map_err(|e| {
        error!("{e}");
        EXIT_CONFIG
    })?;
    let (_, text) = run_solve(&req).map_err(|e| {
        error!("{e}");
        code_for(&e)
    })?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.verb {
        Verb::PhaseTransition(c) => experiment(ExperimentKind::PhaseTransition, c),
        Verb::Convergence(c) => experiment(ExperimentKind::Convergence, c),
        Verb::Noisy(c) => experiment(ExperimentKind::NoisyComparison, c),
        Verb::Unmix(c) => experiment(ExperimentKind::UnmixDemo, c),
        Verb::Verify(c) => experiment(ExperimentKind::VerifySuite, c),
        Verb::Solve(c) => solve(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
