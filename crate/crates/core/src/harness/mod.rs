//! Experiment runners with seeded replication and CSV output.
//!
//! Each replication cell derives its own instance seed from the base seed and
//! the cell coordinates, runs independently (in parallel when enabled) and
//! emits rows that are collected in cell order. Every row carries the instance
//! seed, so a single cell can be reproduced with `solve`.

pub mod config;
pub mod convergence;
pub mod csv;
pub mod noisy;
pub mod phase;
pub mod solve;
pub mod unmix;
pub mod verify;

use std::path::{Path, PathBuf};

use log::warn;

pub use config::{Config, ExperimentConfig, ExperimentKind, Family, Method};
pub use csv::Table;

use crate::error::Result;
use crate::graph::Graph;
use crate::problem::{gen_designs, gen_signals, measure, DesignSet, DesignSharing, MeasurementSet, SignalEnsemble, SignalScheme};
use crate::rng;

/// A generated problem: graph, truth, designs and measurements.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: Graph,
    pub ens: SignalEnsemble,
    pub designs: DesignSet,
    pub meas: MeasurementSet,
    pub seed: u64,
}

impl Instance {
    pub fn truth(&self) -> Vec<nalgebra::DVector<f64>> {
        self.ens.node_signals()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub s_prime: usize,
    pub n1: usize,
    pub n_v: usize,
    pub noise_sd: f64,
    pub scheme: SignalScheme,
    pub sharing: DesignSharing,
}

/// Pure function of `spec` and `seed`.
pub fn build_instance(spec: &InstanceSpec, seed: u64) -> Result<Instance> {
    let graph = spec.family.build(spec.n)?;
    let ens = gen_signals(&graph, spec.d, spec.s, spec.s_prime, spec.scheme, seed)?;
    let mut counts = vec![spec.n_v; spec.n];
    counts[0] = spec.n1;
    let designs = gen_designs(&counts, spec.d, spec.sharing, seed)?;
    let meas = measure(&designs, &ens, spec.noise_sd, seed)?;
    Ok(Instance { graph, ens, designs, meas, seed })
}

/// Instance seed of one replication cell.
pub fn cell_seed(base: u64, experiment: &str, family: Family, n: usize, rep: usize) -> u64 {
    rng::derive_str(base, &format!("{experiment}/{family}/{n}/{rep}"))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub main: Table,
    /// `(suffix, table)`; written next to the main file.
    pub extra: Vec<(String, Table)>,
    /// Cells that failed and were counted as such.
    pub cell_failures: Vec<String>,
    /// Cells that could not be run at all.
    pub aborted: Vec<String>,
    /// Verification outcome; `true` for other experiments.
    pub passed: bool,
}

impl ExperimentOutput {
    pub fn new(kind: ExperimentKind, main: Table) -> Self {
        ExperimentOutput { kind, main, extra: Vec::new(), cell_failures: Vec::new(), aborted: Vec::new(), passed: true }
    }

    pub fn extra(&self, suffix: &str) -> Option<&Table> {
        self.extra.iter().find(|(s, _)| s == suffix).map(|(_, t)| t)
    }

    /// Write the main table to `path` and extras to sibling files.
    pub fn write(&self, path: &Path) -> Result<Vec<PathBuf>> {
        self.main.write(path)?;
        let mut out = vec![path.to_path_buf()];
        for (suffix, t) in &self.extra {
            let p = csv::sibling_path(path, suffix);
            t.write(&p)?;
            out.push(p);
        }
        Ok(out)
    }

    /// Concatenated table bodies, without comment lines.
    pub fn bodies(&self) -> String {
        let mut s = self.main.body();
        for (suffix, t) in &self.extra {
            s.push_str(&format!("[{suffix}]\n"));
            s.push_str(&t.body());
        }
        s
    }
}

pub(crate) fn log_failures(kind: ExperimentKind, failures: &[String]) {
    for f in failures {
        warn!("{}: {f}", kind.name());
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let out = match cfg.kind {
        ExperimentKind::PhaseTransition => phase::run_phase_transition(cfg),
        ExperimentKind::Convergence => convergence::run_convergence(cfg),
        ExperimentKind::NoisyComparison => noisy::run_noisy_comparison(cfg),
        ExperimentKind::UnmixDemo => unmix::run_unmix(cfg),
        ExperimentKind::VerifySuite => verify::run_verify_suite(cfg),
    }?;
    log_failures(cfg.kind, &out.cell_failures);
    log_failures(cfg.kind, &out.aborted);
    Ok(out)
}

pub(crate) fn header_comments(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.resolved.comment_lines()
}
