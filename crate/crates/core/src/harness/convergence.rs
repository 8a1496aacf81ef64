//! Distributed ADMM error traces against a centralized reference.

use crate::distributed::{run_admm, DistributedConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::optim::BpBackend;
use crate::problem::{DesignSharing, SignalScheme};
use crate::solvers::tvbp_with;

use super::config::{ExperimentConfig, ExperimentKind, Family, Method};
use super::csv::{num, Table};
use super::phase::admm_config;
use super::{build_instance, cell_seed, header_comments, ExperimentOutput, InstanceSpec};

pub const HEADER: &[&str] = &["family", "n", "rep", "seed", "round", "sq_error", "primal_residual", "messages"];

pub fn spec_for(cfg: &ExperimentConfig, family: Family, n: usize) -> InstanceSpec {
    InstanceSpec {
        family,
        n,
        d: cfg.d,
        s: cfg.s,
        s_prime: cfg.s_prime,
        n1: cfg.root_samples(),
        n_v: cfg.sweep[0],
        noise_sd: 0.0,
        scheme: SignalScheme::GaussianDiffs,
        sharing: DesignSharing::Independent,
    }
}

type CellRows = std::result::Result<Vec<Vec<String>>, String>;

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.methods != [Method::Admm] {
        return Err(Error::Config("convergence only runs methods=admm".into()));
    }
    let dcfg = DistributedConfig { rho: cfg.rho, mode: cfg.mode, ..DistributedConfig::default() };
    let admm = admm_config(cfg);
    let cells: Vec<(Family, usize, usize)> = cfg
        .topologies()
        .into_iter()
        .flat_map(|(f, n)| (0..cfg.replications).map(move |rep| (f, n, rep)))
        .collect();
    let results: Vec<CellRows> = exec::map(cfg.mode, &cells, |&(family, n, rep)| {
        let seed = cell_seed(cfg.seed, "convergence", family, n, rep);
        let tag = format!("{family} n={n} rep={rep}");
        let inst = build_instance(&spec_for(cfg, family, n), seed).map_err(|e| format!("{tag}: {e}"))?;
        let reference = tvbp_with(&inst.graph, &inst.designs, &inst.meas, BpBackend::Admm, &admm)
            .map_err(|e| format!("{tag}: reference failed: {e}"))?;
        let (trace, _) = run_admm(&inst.graph, &inst.designs, &inst.meas, cfg.rounds, &dcfg, Some(&reference.stacked))
            .map_err(|e| format!("{tag}: {e}"))?;
        Ok(trace
            .rows
            .iter()
            .map(|r| {
                vec![
                    family.to_string(),
                    n.to_string(),
                    rep.to_string(),
                    seed.to_string(),
                    r.round.to_string(),
                    num(r.sq_error.unwrap_or(f64::NAN)),
                    num(r.primal_residual),
                    r.messages.to_string(),
                ]
            })
            .collect())
    });
    let mut main = Table::new("convergence", HEADER);
    main.comments = header_comments(cfg);
    let mut aborted = Vec::new();
    for r in results {
        match r {
            Ok(rows) => rows.into_iter().for_each(|row| main.push(row)),
            Err(msg) => aborted.push(msg),
        }
    }
    let mut out = ExperimentOutput::new(ExperimentKind::Convergence, main);
    out.aborted = aborted;
    Ok(out)
}

/// Squared-error trace of one topology (first replication).
pub fn trace(t: &Table, family: Family, n: usize) -> Vec<f64> {
    let (Some(cf), Some(cn), Some(crep)) = (t.column("family"), t.column("n"), t.column("rep")) else {
        return Vec::new();
    };
    let ce = t.column("sq_error").expect("sq_error column");
    t.rows
        .iter()
        .filter(|r| r[cf] == family.name() && r[cn] == n.to_string() && r[crep] == "0")
        .map(|r| r[ce].parse().unwrap_or(f64::NAN))
        .collect()
}

/// Least-squares fit of `log10(err)` on rounds `lo..=hi`, skipping points
/// below `floor`. Returns `(slope, max |residual|)` in decades.
pub fn log_linear_fit(errors: &[f64], lo: usize, hi: usize, floor: f64) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = (lo..=hi.min(errors.len().saturating_sub(1)))
        .filter(|&k| errors[k].is_finite() && errors[k] > floor)
        .map(|k| (k as f64, errors[k].log10()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let worst = pts.iter().map(|p| (p.1 - (my + slope * (p.0 - mx))).abs()).fold(0.0, f64::max);
    Some((slope, worst))
}
