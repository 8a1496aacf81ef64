//! Recovery probability against the non-root sample count.

use crate::error::{Error, Result};
use crate::exec;
use crate::graph::Graph;
use crate::optim::{AdmmConfig, BpBackend};
use crate::problem::{DesignSharing, SignalScheme};
use crate::solvers::{independent_bp, stepwise_bp, tvbp_with, SolveResult};

use super::config::{ExperimentConfig, ExperimentKind, Family, Method};
use super::csv::{mean_stderr, num, Table};
use super::{build_instance, cell_seed, header_comments, ExperimentOutput, Instance, InstanceSpec};

pub const REPLICATION_HEADER: &[&str] =
    &["family", "n", "n_v", "method", "rep", "seed", "recovered", "iterations", "status"];
pub const AGGREGATE_HEADER: &[&str] =
    &["family", "n", "n_v", "method", "recovery_probability", "stderr", "replications", "failures", "seed"];

/// Deepest node, smallest id on ties.
pub fn farthest_node(g: &Graph) -> usize {
    (1..=g.n()).max_by_key(|&v| (g.depth(v), std::cmp::Reverse(v))).unwrap_or(1)
}

pub(crate) fn admm_config(cfg: &ExperimentConfig) -> AdmmConfig {
    AdmmConfig { rho: cfg.admm_rho, max_iters: cfg.admm_max_iters, ..AdmmConfig::default() }
}

fn check_methods(cfg: &ExperimentConfig) -> Result<()> {
    for m in &cfg.methods {
        if !matches!(m, Method::Tvbp | Method::IndependentBp | Method::StepwiseBp) {
            return Err(Error::Config(format!("method {m} is not a noiseless recovery method")));
        }
    }
    Ok(())
}

/// Solve one cell with `method`; the flag is all-nodes recovery, or the
/// farthest node for independent basis pursuit.
pub fn recovery_flag(method: Method, inst: &Instance, admm: &AdmmConfig) -> Result<(bool, usize)> {
    let truth = inst.truth();
    let mut res: SolveResult = match method {
        Method::Tvbp => tvbp_with(&inst.graph, &inst.designs, &inst.meas, BpBackend::Auto, admm)?,
        Method::IndependentBp => independent_bp(&inst.designs, &inst.meas, BpBackend::Auto)?,
        Method::StepwiseBp => stepwise_bp(&inst.graph, &inst.designs, &inst.meas, BpBackend::Auto)?,
        other => return Err(Error::Config(format!("method {other} not supported here"))),
    };
    res.score(&truth);
    let flag = match method {
        Method::IndependentBp => res.recovered[farthest_node(&inst.graph) - 1],
        _ => res.all_recovered(),
    };
    Ok((flag, res.iterations))
}

pub fn spec_for(cfg: &ExperimentConfig, family: Family, n: usize, n_v: usize) -> InstanceSpec {
    InstanceSpec {
        family,
        n,
        d: cfg.d,
        s: cfg.s,
        s_prime: cfg.s_prime,
        n1: cfg.root_samples(),
        n_v,
        noise_sd: 0.0,
        scheme: SignalScheme::DisjointPm1,
        sharing: DesignSharing::Independent,
    }
}

pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    check_methods(cfg)?;
    let admm = admm_config(cfg);
    let mut cells = Vec::new();
    for (family, n) in cfg.topologies() {
        for &n_v in &cfg.sweep {
            for rep in 0..cfg.replications {
                cells.push((family, n, n_v, rep));
            }
        }
    }
    let rows: Vec<Vec<(Vec<String>, Option<String>)>> = exec::map(cfg.mode, &cells, |&(family, n, n_v, rep)| {
        let seed = cell_seed(cfg.seed, "phase", family, n, rep);
        let inst = build_instance(&spec_for(cfg, family, n, n_v), seed);
        cfg.methods
            .iter()
            .map(|&m| {
                let outcome = inst.as_ref().map_err(Clone::clone).and_then(|inst| recovery_flag(m, inst, &admm));
                let (flag, iters, status, failure) = match outcome {
                    Ok((f, it)) => (f, it, "ok".to_string(), None),
                    Err(e) => {
                        let msg = e.to_string().replace(',', ";");
                        (false, 0, format!("failed: {msg}"), Some(format!("{family} n={n} n_v={n_v} rep={rep} {m}: {e}")))
                    }
                };
                let row = vec![
                    family.to_string(),
                    n.to_string(),
                    n_v.to_string(),
                    m.to_string(),
                    rep.to_string(),
                    seed.to_string(),
                    u8::from(flag).to_string(),
                    iters.to_string(),
                    status,
                ];
                (row, failure)
            })
            .collect()
    });
    let mut reps = Table::new("phase_transition_replications", REPLICATION_HEADER);
    reps.comments = header_comments(cfg);
    let mut failures = Vec::new();
    for cell in rows {
        for (row, failure) in cell {
            reps.push(row);
            failures.extend(failure);
        }
    }
    let main = aggregate(&reps, cfg)?;
    let mut out = ExperimentOutput::new(ExperimentKind::PhaseTransition, main);
    out.extra.push(("replications".into(), reps));
    out.cell_failures = failures;
    Ok(out)
}

/// Mean and standard error per `(family, n, n_v, method)`, recomputed from
/// the replication rows.
pub fn aggregate(reps: &Table, cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new("phase_transition", AGGREGATE_HEADER);
    t.comments = header_comments(cfg);
    let col = |name: &str| reps.column(name).ok_or_else(|| Error::Config(format!("missing column {name}")));
    let (cf, cn, cv, cm, cr, cs) =
        (col("family")?, col("n")?, col("n_v")?, col("method")?, col("recovered")?, col("status")?);
    let mut keys: Vec<(String, String, String, String)> = Vec::new();
    for r in &reps.rows {
        let k = (r[cf].clone(), r[cn].clone(), r[cv].clone(), r[cm].clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for k in keys {
        let rows: Vec<&Vec<String>> =
            reps.rows.iter().filter(|r| r[cf] == k.0 && r[cn] == k.1 && r[cv] == k.2 && r[cm] == k.3).collect();
        let flags: Vec<f64> = rows.iter().map(|r| r[cr].parse::<f64>().unwrap_or(0.0)).collect();
        let failed = rows.iter().filter(|r| r[cs] != "ok").count();
        let (p, se) = mean_stderr(&flags);
        t.push(vec![
            k.0,
            k.1,
            k.2,
            k.3,
            num(p),
            num(se),
            flags.len().to_string(),
            failed.to_string(),
            cfg.seed.to_string(),
        ]);
    }
    Ok(t)
}

/// Probability column for one `(family, n, n_v, method)` cell.
pub fn probability(t: &Table, family: Family, n: usize, n_v: usize, method: Method) -> Option<(f64, f64)> {
    let (cf, cn, cv, cm) = (t.column("family")?, t.column("n")?, t.column("n_v")?, t.column("method")?);
    let (cp, cse) = (t.column("recovery_probability")?, t.column("stderr")?);
    t.rows
        .iter()
        .find(|r| r[cf] == family.name() && r[cn] == n.to_string() && r[cv] == n_v.to_string() && r[cm] == method.name())
        .map(|r| (r[cp].parse().unwrap_or(f64::NAN), r[cse].parse().unwrap_or(f64::NAN)))
}
