//! l1 estimation error of the noisy estimators against the number of agents.

use crate::error::{Error, Result};
use crate::exec;
use crate::problem::{DesignSharing, SignalScheme};
use crate::solvers::{group_lasso_path, independent_bpdn, tvbpd, GroupLassoConfig};

use super::config::{ExperimentConfig, ExperimentKind, Family, Method};
use super::csv::{mean_stderr, num, Table};
use super::phase::admm_config;
use super::{build_instance, cell_seed, header_comments, ExperimentOutput, Instance, InstanceSpec};

pub const REPLICATION_HEADER: &[&str] =
    &["family", "n", "method", "rep", "seed", "l1_error", "lambda", "iterations", "status"];
pub const AGGREGATE_HEADER: &[&str] =
    &["family", "n", "method", "l1_error", "stderr", "replications", "failures", "seed"];

pub fn spec_for(cfg: &ExperimentConfig, family: Family, n: usize) -> InstanceSpec {
    InstanceSpec {
        family,
        n,
        d: cfg.d,
        s: cfg.s,
        s_prime: cfg.s_prime,
        n1: cfg.root_samples(),
        n_v: cfg.sweep[0],
        noise_sd: cfg.noise_sd,
        scheme: SignalScheme::DisjointPm1,
        sharing: DesignSharing::SharedNonRoot,
    }
}

/// Joint budget: the configured value, else `sqrt(sum_v N_v) * noise_sd`.
pub fn joint_eta(cfg: &ExperimentConfig, inst: &Instance) -> f64 {
    cfg.eta.unwrap_or(inst.meas.eta)
}

/// Grid values refer to the per-sample loss `(1 / 2N) ||y - A x||^2`; the
/// solver's loss is unnormalized, so they are multiplied by `2 N`.
pub fn group_lasso_scale(inst: &Instance) -> f64 {
    2.0 * inst.designs.sample_counts.iter().copied().max().unwrap_or(1) as f64
}

struct Outcome {
    l1: f64,
    lambda: Option<f64>,
    iterations: usize,
}

fn solve(method: Method, cfg: &ExperimentConfig, inst: &Instance) -> Result<Outcome> {
    let truth = inst.truth();
    let eta = joint_eta(cfg, inst);
    match method {
        Method::Tvbpd => {
            let r = tvbpd(&inst.graph, &inst.designs, &inst.meas, eta, &admm_config(cfg))?;
            Ok(Outcome { l1: r.l1_error(&truth), lambda: None, iterations: r.iterations })
        }
        Method::GroupLasso => {
            let glc = GroupLassoConfig { iters: cfg.group_lasso_iters, ..GroupLassoConfig::default() };
            let grid = cfg.lambda_grid();
            let scale = group_lasso_scale(inst);
            let scaled: Vec<f64> = grid.iter().map(|l| l * scale).collect();
            let path = group_lasso_path(&inst.designs, &inst.meas, &scaled, &glc)?;
            let (k, best) = path
                .iter()
                .map(|r| r.l1_error(&truth))
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .ok_or_else(|| Error::Config("empty lambda grid".into()))?;
            Ok(Outcome { l1: best, lambda: Some(grid[k]), iterations: path[k].iterations })
        }
        Method::IndependentBpdn => {
            let per_node = eta / (inst.graph.n() as f64).sqrt();
            let r = independent_bpdn(&inst.designs, &inst.meas, per_node, &admm_config(cfg))?;
            Ok(Outcome { l1: r.l1_error(&truth), lambda: None, iterations: r.iterations })
        }
        other => Err(Error::Config(format!("method {other} is not a noisy estimator"))),
    }
}

pub fn run_noisy_comparison(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    for m in &cfg.methods {
        if !matches!(m, Method::Tvbpd | Method::GroupLasso | Method::IndependentBpdn) {
            return Err(Error::Config(format!("method {m} is not a noisy estimator")));
        }
    }
    let cells: Vec<(Family, usize, usize)> = cfg
        .topologies()
        .into_iter()
        .flat_map(|(f, n)| (0..cfg.replications).map(move |rep| (f, n, rep)))
        .collect();
    let rows: Vec<Vec<(Vec<String>, Option<String>)>> = exec::map(cfg.mode, &cells, |&(family, n, rep)| {
        let seed = cell_seed(cfg.seed, "noisy", family, n, rep);
        let inst = build_instance(&spec_for(cfg, family, n), seed);
        cfg.methods
            .iter()
            .map(|&m| {
                let outcome = inst.as_ref().map_err(Clone::clone).and_then(|inst| solve(m, cfg, inst));
                let (l1, lambda, iters, status, failure) = match outcome {
                    Ok(o) => (o.l1, o.lambda, o.iterations, "ok".to_string(), None),
                    Err(e) => {
                        let msg = e.to_string().replace(',', ";");
                        let fail = format!("{family} n={n} rep={rep} {m}: {e}");
                        (f64::NAN, None, 0, format!("failed: {msg}"), Some(fail))
                    }
                };
                let row = vec![
                    family.to_string(),
                    n.to_string(),
                    m.to_string(),
                    rep.to_string(),
                    seed.to_string(),
                    num(l1),
                    lambda.map_or_else(|| "nan".to_string(), num),
                    iters.to_string(),
                    status,
                ];
                (row, failure)
            })
            .collect()
    });
    let mut reps = Table::new("noisy_comparison_replications", REPLICATION_HEADER);
    reps.comments = header_comments(cfg);
    let mut failures = Vec::new();
    for cell in rows {
        for (row, f) in cell {
            reps.push(row);
            failures.extend(f);
        }
    }
    let main = aggregate(&reps, cfg)?;
    let mut out = ExperimentOutput::new(ExperimentKind::NoisyComparison, main);
    out.extra.push(("replications".into(), reps));
    out.cell_failures = failures;
    Ok(out)
}

/// Mean and standard error over successful replications.
pub fn aggregate(reps: &Table, cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new("noisy_comparison", AGGREGATE_HEADER);
    t.comments = header_comments(cfg);
    t.comments.push("eta rule: sqrt(sum of sample counts) * noise_sd unless eta is set".into());
    t.comments.push("group_lasso: best lambda on the grid per replication; grid is per-sample (loss / 2N)".into());
    let col = |name: &str| reps.column(name).ok_or_else(|| Error::Config(format!("missing column {name}")));
    let (cf, cn, cm, ce, cs) = (col("family")?, col("n")?, col("method")?, col("l1_error")?, col("status")?);
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in &reps.rows {
        let k = (r[cf].clone(), r[cn].clone(), r[cm].clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for k in keys {
        let rows: Vec<&Vec<String>> = reps.rows.iter().filter(|r| r[cf] == k.0 && r[cn] == k.1 && r[cm] == k.2).collect();
        let ok: Vec<f64> = rows.iter().filter(|r| r[cs] == "ok").map(|r| r[ce].parse().unwrap_or(f64::NAN)).collect();
        let (mean, se) = mean_stderr(&ok);
        t.push(vec![
            k.0,
            k.1,
            k.2,
            num(mean),
            num(se),
            ok.len().to_string(),
            (rows.len() - ok.len()).to_string(),
            cfg.seed.to_string(),
        ]);
    }
    Ok(t)
}

/// `(mean, stderr)` of one `(family, n, method)` cell.
pub fn error_of(t: &Table, family: Family, n: usize, method: Method) -> Option<(f64, f64)> {
    let (cf, cn, cm) = (t.column("family")?, t.column("n")?, t.column("method")?);
    let (ce, cse) = (t.column("l1_error")?, t.column("stderr")?);
    t.rows
        .iter()
        .find(|r| r[cf] == family.name() && r[cn] == n.to_string() && r[cm] == method.name())
        .map(|r| (r[ce].parse().unwrap_or(f64::NAN), r[cse].parse().unwrap_or(f64::NAN)))
}
