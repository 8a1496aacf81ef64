//! Synthetic unmixing: a pixel grid whose abundances vary slowly across
//! neighbours, measured through one shared spectral library.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exec;
use crate::graph::Graph;
use crate::problem::{gen_design, gen_signals, measure, DesignSet, SignalScheme};
use crate::rng;
use crate::solvers::{independent_bpdn, tiled_tvbpd, PixelGrid};

use super::config::{ExperimentConfig, ExperimentKind, Method};
use super::csv::{mean_stderr, num, Table};
use super::phase::admm_config;
use super::{header_comments, ExperimentOutput};

pub const REPLICATION_HEADER: &[&str] = &["method", "rep", "seed", "pixel_l1_error", "failed_pixels", "status"];
pub const AGGREGATE_HEADER: &[&str] = &["method", "pixel_l1_error", "stderr", "replications", "failures", "seed"];
pub const COEFFICIENT_HEADER: &[&str] = &["method", "rep", "seed", "row", "col", "coord", "estimate", "truth"];

/// Raster spanning tree of a `rows x cols` grid: every pixel hangs off its
/// left neighbour, first-column pixels off the pixel above.
pub fn raster_tree(rows: usize, cols: usize) -> Result<Graph> {
    let id = |r: usize, c: usize| r * cols + c + 1;
    let mut edges = Vec::with_capacity(rows * cols - 1);
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                edges.push((id(r, c - 1), id(r, c)));
            } else if r > 0 {
                edges.push((id(r - 1, 0), id(r, 0)));
            }
        }
    }
    Graph::from_edges(rows * cols, edges)
}

struct Replicate {
    truth: Vec<DVector<f64>>,
    estimates: Vec<(Method, std::result::Result<Vec<Option<DVector<f64>>>, String>)>,
}

fn run_one(cfg: &ExperimentConfig, seed: u64) -> Result<Replicate> {
    let (rows, cols, bands) = (cfg.grid_rows, cfg.grid_cols, cfg.bands);
    let g = raster_tree(rows, cols)?;
    let ens = gen_signals(&g, cfg.d, cfg.s, cfg.s_prime, SignalScheme::DisjointPm1, seed)?;
    let library = gen_design(bands, cfg.d, rng::derive_str(seed, "library"));
    let designs = DesignSet::from_matrices(vec![library.clone(); rows * cols], true)?;
    let meas = measure(&designs, &ens, cfg.noise_sd, seed)?;
    let admm = admm_config(cfg);
    let mut estimates = Vec::new();
    for &m in &cfg.methods {
        let est = match m {
            Method::Tvbpd => {
                let grid = PixelGrid::new(rows, cols, meas.responses.clone())?;
                let eta = cfg.eta.unwrap_or((4.0 * bands as f64).sqrt() * cfg.noise_sd);
                tiled_tvbpd(&grid, &library, eta, &admm, cfg.mode).map(|t| t.coefficients)
            }
            Method::IndependentBpdn => {
                let eta = (bands as f64).sqrt() * cfg.noise_sd;
                independent_bpdn(&designs, &meas, eta, &admm).map(|r| {
                    r.estimates
                        .into_iter()
                        .zip(r.status)
                        .map(|(x, st)| (st == crate::solvers::NodeStatus::Ok).then_some(x))
                        .collect()
                })
            }
            other => return Err(Error::Config(format!("method {other} is not an unmixing method"))),
        };
        estimates.push((m, est.map_err(|e| e.to_string())));
    }
    Ok(Replicate { truth: ens.node_signals(), estimates })
}

pub fn run_unmix(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    for m in &cfg.methods {
        if !matches!(m, Method::Tvbpd | Method::IndependentBpdn) {
            return Err(Error::Config(format!("method {m} is not an unmixing method")));
        }
    }
    let seeds: Vec<u64> = (0..cfg.replications).map(|rep| rng::derive_str(cfg.seed, &format!("unmix/{rep}"))).collect();
    let results = exec::map(cfg.mode, &seeds, |&seed| run_one(cfg, seed));
    let mut reps = Table::new("unmix_demo_replications", REPLICATION_HEADER);
    reps.comments = header_comments(cfg);
    let mut coeffs = Table::new("unmix_demo_coefficients", COEFFICIENT_HEADER);
    coeffs.comments = header_comments(cfg);
    let mut out_failures = Vec::new();
    for (rep, (res, &seed)) in results.into_iter().zip(&seeds).enumerate() {
        let res = res?;
        for (m, est) in res.estimates {
            let row = |err: f64, failed: usize, status: String| {
                vec![m.to_string(), rep.to_string(), seed.to_string(), num(err), failed.to_string(), status]
            };
            match est {
                Ok(pixels) => {
                    let failed = pixels.iter().filter(|p| p.is_none()).count();
                    let errs: Vec<f64> = pixels
                        .iter()
                        .zip(&res.truth)
                        .filter_map(|(p, t)| p.as_ref().map(|p| (p - t).lp_norm(1)))
                        .collect();
                    let mean = if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 };
                    if failed > 0 {
                        out_failures.push(format!("rep={rep} {m}: {failed} pixels failed"));
                    }
                    reps.push(row(mean, failed, if failed == 0 { "ok".into() } else { "partial".into() }));
                    if rep == 0 {
                        for (k, (p, t)) in pixels.iter().zip(&res.truth).enumerate() {
                            for j in 0..t.len() {
                                coeffs.push(vec![
                                    m.to_string(),
                                    rep.to_string(),
                                    seed.to_string(),
                                    (k / cfg.grid_cols).to_string(),
                                    (k % cfg.grid_cols).to_string(),
                                    j.to_string(),
                                    p.as_ref().map_or_else(|| "nan".into(), |p| num(p[j])),
                                    num(t[j]),
                                ]);
                            }
                        }
                    }
                }
                Err(e) => {
                    out_failures.push(format!("rep={rep} {m}: {e}"));
                    reps.push(row(f64::NAN, res.truth.len(), format!("failed: {}", e.replace(',', ";"))));
                }
            }
        }
    }
    let main = aggregate(&reps, cfg)?;
    let mut out = ExperimentOutput::new(ExperimentKind::UnmixDemo, main);
    out.extra.push(("replications".into(), reps));
    out.extra.push(("coefficients".into(), coeffs));
    out.cell_failures = out_failures;
    Ok(out)
}

pub fn aggregate(reps: &Table, cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new("unmix_demo", AGGREGATE_HEADER);
    t.comments = header_comments(cfg);
    let col = |name: &str| reps.column(name).ok_or_else(|| Error::Config(format!("missing column {name}")));
    let (cm, ce, cs) = (col("method")?, col("pixel_l1_error")?, col("status")?);
    for m in &cfg.methods {
        let rows = reps.filter("method", m.name());
        let ok: Vec<f64> = rows.iter().filter(|r| r[cs] == "ok").map(|r| r[ce].parse().unwrap_or(f64::NAN)).collect();
        let (mean, se) = mean_stderr(&ok);
        debug_assert!(rows.iter().all(|r| r[cm] == m.name()));
        t.push(vec![
            m.to_string(),
            num(mean),
            num(se),
            ok.len().to_string(),
            (rows.len() - ok.len()).to_string(),
            cfg.seed.to_string(),
        ]);
    }
    Ok(t)
}

/// `(mean, stderr)` of the per-pixel error for `method`.
pub fn error_of(t: &Table, method: Method) -> Option<(f64, f64)> {
    let (ce, cse) = (t.column("pixel_l1_error")?, t.column("stderr")?);
    t.filter("method", method.name())
        .first()
        .map(|r| (r[ce].parse().unwrap_or(f64::NAN), r[cse].parse().unwrap_or(f64::NAN)))
}
