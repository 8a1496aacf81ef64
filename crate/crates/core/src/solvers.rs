//! Centralized joint solvers and the baselines they are compared against.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::graph::{make_path, make_star, Graph};
use crate::optim::bp::{basis_pursuit_with, bpdn, AdmmConfig, BpBackend};
use crate::optim::prox::group_soft_threshold;
use crate::problem::{DesignSet, MeasurementSet};
use crate::reformulation::{build_augmented, build_from_parts, expand_solution, stack_solution};

/// Relative l2 error under which a node counts as recovered.
pub const RECOVERY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeStatus {
    Ok,
    /// The node's own subproblem failed.
    Failed(String),
    /// The solve succeeded but returned a dense (non-sparse) difference.
    Suspect,
    /// An ancestor was not `Ok`; the estimate builds on it.
    Inherited,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub method: String,
    pub estimates: Vec<DVector<f64>>,
    pub stacked: DVector<f64>,
    pub objective: f64,
    /// Per-node `||A_v x_v - y_v||_2`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub recovered: Vec<bool>,
    pub status: Vec<NodeStatus>,
    pub seconds: f64,
}

/// Identifies an instance in the one-line CSV summary.
#[derive(Debug, Clone, Copy)]
pub struct SummaryInfo {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub s_prime: usize,
    pub n_v: usize,
    pub seed: u64,
}

pub const SUMMARY_HEADER: &str = "method,n,d,s,s_prime,n_v,seed,recovered,l1_error,iters,seconds";

pub fn node_recovered(est: &DVector<f64>, truth: &DVector<f64>) -> bool {
    let err = (est - truth).norm();
    let scale = truth.norm();
    if scale > 0.0 {
        err <= RECOVERY_TOL * scale
    } else {
        err <= 1e-8
    }
}

impl SolveResult {
    fn assemble(
        method: &str,
        stacking: &Graph,
        estimates: Vec<DVector<f64>>,
        designs: &[DMatrix<f64>],
        responses: &[DVector<f64>],
        iterations: usize,
        status: Vec<NodeStatus>,
        start: Instant,
    ) -> Self {
        let residuals = designs
            .iter()
            .zip(responses)
            .zip(&estimates)
            .map(|((a, y), x)| (a * x - y).norm())
            .collect();
        let stacked = stack_solution(stacking, &estimates);
        let objective = stacked.lp_norm(1);
        let n = estimates.len();
        SolveResult {
            method: method.to_string(),
            estimates,
            stacked,
            objective,
            residuals,
            iterations,
            recovered: vec![false; n],
            status,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    pub fn n(&self) -> usize {
        self.estimates.len()
    }

    /// Fill `recovered` against the true per-node signals.
    pub fn score(&mut self, truth: &[DVector<f64>]) {
        self.recovered = self
            .estimates
            .iter()
            .zip(truth)
            .map(|(e, t)| node_recovered(e, t))
            .collect();
    }

    pub fn all_recovered(&self) -> bool {
        !self.recovered.is_empty() && self.recovered.iter().all(|&r| r)
    }

    /// `sum_v ||x_v - x*_v||_1`.
    pub fn l1_error(&self, truth: &[DVector<f64>]) -> f64 {
        self.estimates
            .iter()
            .zip(truth)
            .map(|(e, t)| (e - t).lp_norm(1))
            .sum()
    }

    pub fn summary_row(&self, info: &SummaryInfo, truth: &[DVector<f64>]) -> String {
        let recovered = self
            .estimates
            .iter()
            .zip(truth)
            .all(|(e, t)| node_recovered(e, t));
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{:.6e},{},{:.3}",
            self.method,
            info.n,
            info.d,
            info.s,
            info.s_prime,
            info.n_v,
            info.seed,
            u8::from(recovered),
            self.l1_error(truth),
            self.iterations,
            self.seconds
        );
        s
    }

    pub fn to_container(&self) -> Container {
        let status: Vec<String> = self
            .status
            .iter()
            .map(|s| match s {
                NodeStatus::Ok => "ok".to_string(),
                NodeStatus::Failed(m) => format!("failed: {m}"),
                NodeStatus::Suspect => "suspect".to_string(),
                NodeStatus::Inherited => "inherited".to_string(),
            })
            .collect();
        let mut c = Container::new(json!({
            "kind": "solve_result",
            "method": self.method,
            "objective": self.objective,
            "iterations": self.iterations,
            "residuals": self.residuals,
            "recovered": self.recovered,
            "status": status,
        }));
        c.push_vector("stacked", &self.stacked);
        for (v, x) in self.estimates.iter().enumerate() {
            c.push_vector(format!("x_{}", v + 1), x);
        }
        c
    }
}

fn check_noise_free(meas: &MeasurementSet) -> Result<()> {
    if meas.noise.iter().any(|e| e.amax() > 0.0) {
        return Err(Error::InvalidArgument(
            "tvbp expects noiseless measurements".into(),
        ));
    }
    Ok(())
}

/// Total-variation basis pursuit over `g_tilde`.
pub fn tvbp(
    g_tilde: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
    backend: BpBackend,
) -> Result<SolveResult> {
    tvbp_with(g_tilde, designs, meas, backend, &AdmmConfig::default())
}

pub fn tvbp_with(
    g_tilde: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
    backend: BpBackend,
    cfg: &AdmmConfig,
) -> Result<SolveResult> {
    let start = Instant::now();
    check_noise_free(meas)?;
    let aug = build_augmented(g_tilde, designs, meas)?;
    let sol = basis_pursuit_with(&aug, &aug.y, backend, cfg)?;
    let estimates = expand_solution(g_tilde, &sol.x)?;
    let mut res = SolveResult::assemble(
        "tvbp",
        g_tilde,
        estimates,
        &designs.matrices,
        &meas.responses,
        sol.iterations,
        vec![NodeStatus::Ok; g_tilde.n()],
        start,
    );
    res.stacked = sol.x;
    res.objective = sol.objective;
    Ok(res)
}

/// Total-variation basis pursuit denoising with stacked residual budget `eta`.
/// The system is divided by the square root of the total sample count first.
pub fn tvbpd(
    g_tilde: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
    eta: f64,
    cfg: &AdmmConfig,
) -> Result<SolveResult> {
    let start = Instant::now();
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument("eta must be non-negative".into()));
    }
    let aug = build_augmented(g_tilde, designs, meas)?;
    let f = 1.0 / (aug.nrows() as f64).sqrt();
    let scaled = aug.scaled(f);
    let sol = bpdn(&scaled, &scaled.y, eta * f, cfg)?;
    let estimates = expand_solution(g_tilde, &sol.x)?;
    let mut res = SolveResult::assemble(
        "tvbpd",
        g_tilde,
        estimates,
        &designs.matrices,
        &meas.responses,
        sol.iterations,
        vec![NodeStatus::Ok; g_tilde.n()],
        start,
    );
    res.stacked = sol.x;
    res.objective = sol.objective;
    Ok(res)
}

/// Per-node basis pursuit without coupling. The stacked vector uses a path
/// over the node order.
pub fn independent_bp(
    designs: &DesignSet,
    meas: &MeasurementSet,
    backend: BpBackend,
) -> Result<SolveResult> {
    let start = Instant::now();
    let n = check_pairs(designs, meas)?;
    let cfg = AdmmConfig::default();
    let sols = exec::map_range(ExecMode::default(), n, |v| {
        basis_pursuit_with(&designs.matrices[v], &meas.responses[v], backend, &cfg)
    });
    let mut estimates = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut iterations = 0;
    for sol in sols {
        match sol {
            Ok(s) => {
                iterations += s.iterations;
                estimates.push(s.x);
                status.push(NodeStatus::Ok);
            }
            Err(e) => {
                estimates.push(DVector::zeros(designs.d));
                status.push(NodeStatus::Failed(e.to_string()));
            }
        }
    }
    Ok(SolveResult::assemble(
        "independent_bp",
        &make_path(n)?,
        estimates,
        &designs.matrices,
        &meas.responses,
        iterations,
        status,
        start,
    ))
}

/// Per-node basis pursuit denoising, each node with its own budget.
pub fn independent_bpdn(
    designs: &DesignSet,
    meas: &MeasurementSet,
    eta_per_node: f64,
    cfg: &AdmmConfig,
) -> Result<SolveResult> {
    let start = Instant::now();
    let n = check_pairs(designs, meas)?;
    let sols = exec::map_range(ExecMode::default(), n, |v| {
        bpdn(&designs.matrices[v], &meas.responses[v], eta_per_node, cfg)
    });
    let mut estimates = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut iterations = 0;
    for sol in sols {
        match sol {
            Ok(s) => {
                iterations += s.iterations;
                estimates.push(s.x);
                status.push(NodeStatus::Ok);
            }
            Err(e) => {
                estimates.push(DVector::zeros(designs.d));
                status.push(NodeStatus::Failed(e.to_string()));
            }
        }
    }
    Ok(SolveResult::assemble(
        "independent_bpdn",
        &make_path(n)?,
        estimates,
        &designs.matrices,
        &meas.responses,
        iterations,
        status,
        start,
    ))
}

fn check_pairs(designs: &DesignSet, meas: &MeasurementSet) -> Result<usize> {
    let n = designs.n();
    if meas.responses.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} designs, {} responses",
            meas.responses.len()
        )));
    }
    for (v, (a, y)) in designs.matrices.iter().zip(&meas.responses).enumerate() {
        if a.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "node {}: {} rows, {} responses",
                v + 1,
                a.nrows(),
                y.len()
            )));
        }
    }
    Ok(n)
}

fn dense_difference(delta: &DVector<f64>, rows: usize) -> bool {
    let m = delta.amax();
    if m == 0.0 || rows >= delta.len() {
        return false;
    }
    delta.iter().filter(|x| x.abs() > 1e-9 * m).count() >= rows
}

/// Root by basis pursuit, then each edge difference given the reconstructed
/// parent, breadth-first from the root. Requires the true graph.
pub fn stepwise_bp(
    g: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
    backend: BpBackend,
) -> Result<SolveResult> {
    stepwise_bp_from(g, designs, meas, backend, None)
}

/// As [`stepwise_bp`], optionally replacing the root estimate.
pub fn stepwise_bp_from(
    g: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
    backend: BpBackend,
    root_override: Option<DVector<f64>>,
) -> Result<SolveResult> {
    let start = Instant::now();
    let n = check_pairs(designs, meas)?;
    if n != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} nodes, {n} designs",
            g.n()
        )));
    }
    let cfg = AdmmConfig::default();
    let d = designs.d;
    let mut estimates = vec![DVector::zeros(d); n];
    let mut status = vec![NodeStatus::Ok; n];
    let mut iterations = 0;
    match root_override {
        Some(x) => {
            if x.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "root estimate has length {}",
                    x.len()
                )));
            }
            estimates[0] = x;
        }
        None => match basis_pursuit_with(&designs.matrices[0], &meas.responses[0], backend, &cfg) {
            Ok(s) => {
                iterations += s.iterations;
                if dense_difference(&s.x, designs.matrices[0].nrows()) {
                    status[0] = NodeStatus::Suspect;
                }
                estimates[0] = s.x;
            }
            Err(e) => status[0] = NodeStatus::Failed(e.to_string()),
        },
    }
    for v in g.bfs_order().into_iter().skip(1) {
        let (p, _) = g.parent(v).expect("non-root has a parent");
        let a = &designs.matrices[v - 1];
        let rhs = &meas.responses[v - 1] - a * &estimates[p - 1];
        let parent_ok = status[p - 1] == NodeStatus::Ok;
        match basis_pursuit_with(a, &rhs, backend, &cfg) {
            Ok(s) => {
                iterations += s.iterations;
                status[v - 1] = if dense_difference(&s.x, a.nrows()) {
                    NodeStatus::Suspect
                } else if parent_ok {
                    NodeStatus::Ok
                } else {
                    NodeStatus::Inherited
                };
                estimates[v - 1] = &estimates[p - 1] + s.x;
            }
            Err(e) => {
                estimates[v - 1] = estimates[p - 1].clone();
                status[v - 1] = NodeStatus::Failed(e.to_string());
            }
        }
    }
    Ok(SolveResult::assemble(
        "stepwise_bp",
        g,
        estimates,
        &designs.matrices,
        &meas.responses,
        iterations,
        status,
        start,
    ))
}

#[derive(Debug, Clone)]
pub struct GroupLassoConfig {
    pub iters: usize,
    pub power_iters: usize,
    pub tol: f64,
}

impl Default for GroupLassoConfig {
    fn default() -> Self {
        GroupLassoConfig {
            iters: 1000,
            power_iters: 50,
            tol: 1e-12,
        }
    }
}

/// Squared spectral norm of the block-diagonal operator by power iteration.
fn block_diag_norm_sq(designs: &[DMatrix<f64>], iters: usize) -> f64 {
    let d = designs[0].ncols();
    let mut x: Vec<DVector<f64>> = (0..designs.len())
        .map(|v| DVector::from_fn(d, |i, _| 1.0 + ((i + 7 * v) % 5) as f64 * 0.1))
        .collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let norm = x.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let y: Vec<DVector<f64>> = designs
            .iter()
            .zip(&x)
            .map(|(a, v)| a.tr_mul(&(a * v)) / norm)
            .collect();
        est = y.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        x = y;
    }
    est
}

fn group_lasso_objective(
    designs: &[DMatrix<f64>],
    ys: &[DVector<f64>],
    x: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let fit: f64 = designs
        .iter()
        .zip(ys)
        .enumerate()
        .map(|(v, (a, y))| (a * x.row(v).transpose() - y).norm_squared())
        .sum();
    let pen: f64 = x.column_iter().map(|c| c.norm()).sum();
    fit + lambda * pen
}

/// FISTA with objective-based restarts on
/// `sum_v ||y_v - A_v x_v||^2 + lambda sum_j ||(x_1j, ..., x_nj)||_2`.
/// `warm` is an `n x d` starting point.
pub fn group_lasso_with(
    designs: &DesignSet,
    meas: &MeasurementSet,
    lambda: f64,
    cfg: &GroupLassoConfig,
    warm: Option<&DMatrix<f64>>,
) -> Result<SolveResult> {
    let start = Instant::now();
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    let n = check_pairs(designs, meas)?;
    let d = designs.d;
    let mats = &designs.matrices;
    let ys = &meas.responses;
    let lip = 2.0 * block_diag_norm_sq(mats, cfg.power_iters.max(1)) * 1.02;
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut x = match warm {
        Some(w) if w.shape() == (n, d) => w.clone(),
        Some(w) => {
            return Err(Error::ShapeMismatch(format!(
                "warm start is {:?}",
                w.shape()
            )))
        }
        None => DMatrix::zeros(n, d),
    };
    let mut f_x = group_lasso_objective(mats, ys, &x, lambda);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut used = 0;
    for k in 1..=cfg.iters {
        used = k;
        let mut grad = DMatrix::zeros(n, d);
        for v in 0..n {
            let zv = z.row(v).transpose();
            let g = (mats[v].tr_mul(&(&mats[v] * zv - &ys[v]))) * 2.0;
            grad.row_mut(v).copy_from(&g.transpose());
        }
        let x_new = group_soft_threshold(&(&z - grad * step), lambda * step);
        let f_new = group_lasso_objective(mats, ys, &x_new, lambda);
        if f_new > f_x {
            // restart momentum from the current iterate
            z = x.clone();
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        let change = (&x_new - &x).norm();
        let scale = x_new.norm().max(1.0);
        let decrease = f_x - f_new;
        x = x_new;
        f_x = f_new;
        if change <= cfg.tol * scale && decrease <= cfg.tol * f_x.max(1.0) {
            break;
        }
    }
    let estimates: Vec<DVector<f64>> = (0..n).map(|v| x.row(v).transpose()).collect();
    let mut res = SolveResult::assemble(
        "group_lasso",
        &make_path(n)?,
        estimates,
        mats,
        ys,
        used,
        vec![NodeStatus::Ok; n],
        start,
    );
    res.objective = f_x;
    Ok(res)
}

pub fn group_lasso(
    designs: &DesignSet,
    meas: &MeasurementSet,
    lambda: f64,
    iters: usize,
) -> Result<SolveResult> {
    group_lasso_with(
        designs,
        meas,
        lambda,
        &GroupLassoConfig {
            iters,
            ..Default::default()
        },
        None,
    )
}

/// `count` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Default regularisation grid for the group-lasso baseline.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-6, 1e-2, 9)
}

/// Solve along `lambdas` from largest to smallest with warm starts; results
/// come back in the order of `lambdas`.
pub fn group_lasso_path(
    designs: &DesignSet,
    meas: &MeasurementSet,
    lambdas: &[f64],
    cfg: &GroupLassoConfig,
) -> Result<Vec<SolveResult>> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&i, &j| lambdas[j].total_cmp(&lambdas[i]));
    let mut out: Vec<Option<SolveResult>> = vec![None; lambdas.len()];
    let mut warm: Option<DMatrix<f64>> = None;
    for i in order {
        let res = group_lasso_with(designs, meas, lambdas[i], cfg, warm.as_ref())?;
        let n = res.n();
        let mut w = DMatrix::zeros(n, designs.d);
        for (v, x) in res.estimates.iter().enumerate() {
            w.row_mut(v).copy_from(&x.transpose());
        }
        warm = Some(w);
        out[i] = Some(res);
    }
    Ok(out
        .into_iter()
        .map(|r| r.expect("every lambda solved"))
        .collect())
}

/// Row-major grid of per-pixel measurement vectors.
#[derive(Debug, Clone)]
pub struct PixelGrid {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<DVector<f64>>,
}

impl PixelGrid {
    pub fn new(rows: usize, cols: usize, pixels: Vec<DVector<f64>>) -> Result<Self> {
        if rows == 0 || cols == 0 || pixels.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} grid with {} pixels",
                pixels.len()
            )));
        }
        let len = pixels[0].len();
        if pixels.iter().any(|p| p.len() != len) {
            return Err(Error::ShapeMismatch("pixels differ in length".into()));
        }
        Ok(PixelGrid { rows, cols, pixels })
    }

    pub fn get(&self, r: usize, c: usize) -> &DVector<f64> {
        &self.pixels[r * self.cols + c]
    }
}

#[derive(Debug, Clone)]
pub struct TiledResult {
    /// Row-major per-pixel coefficients; `None` where the tile failed.
    pub coefficients: Vec<Option<DVector<f64>>>,
    /// `(tile_row, tile_col, message)` for failed tiles.
    pub failures: Vec<(usize, usize, String)>,
    pub tiles: usize,
}

/// Tile the grid into 2x2 blocks (odd edges padded by duplication) and solve
/// each block as tvbpd on a star rooted at its top-left pixel.
pub fn tiled_tvbpd(
    grid: &PixelGrid,
    design: &DMatrix<f64>,
    eta: f64,
    cfg: &AdmmConfig,
    mode: ExecMode,
) -> Result<TiledResult> {
    if grid.pixels[0].len() != design.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "pixels have {} bands, design has {} rows",
            grid.pixels[0].len(),
            design.nrows()
        )));
    }
    let (tr, tc) = (grid.rows.div_ceil(2), grid.cols.div_ceil(2));
    let star = make_star(4)?;
    let tiles: Vec<(usize, usize)> = (0..tr).flat_map(|i| (0..tc).map(move |j| (i, j))).collect();
    let solved = exec::map(mode, &tiles, |&(i, j)| {
        let cells = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let responses: Vec<DVector<f64>> = cells
            .iter()
            .map(|&(di, dj)| {
                let r = (2 * i + di).min(grid.rows - 1);
                let c = (2 * j + dj).min(grid.cols - 1);
                grid.get(r, c).clone()
            })
            .collect();
        let run = || -> Result<Vec<DVector<f64>>> {
            let aug = build_from_parts(&star, vec![design.clone(); 4], &responses)?;
            let f = 1.0 / (aug.nrows() as f64).sqrt();
            let scaled = aug.scaled(f);
            let sol = bpdn(&scaled, &scaled.y, eta * f, cfg)?;
            expand_solution(&star, &sol.x)
        };
        run()
    });
    let mut coefficients = vec![None; grid.rows * grid.cols];
    let mut failures = Vec::new();
    for (&(i, j), res) in tiles.iter().zip(solved) {
        match res {
            Ok(xs) => {
                for (k, &(di, dj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    let (r, c) = (2 * i + di, 2 * j + dj);
                    if r < grid.rows && c < grid.cols {
                        coefficients[r * grid.cols + c] = Some(xs[k].clone());
                    }
                }
            }
            Err(e) => failures.push((i, j, e.to_string())),
        }
    }
    Ok(TiledResult {
        coefficients,
        failures,
        tiles: tiles.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_balanced_tree, make_path, make_star};
    use crate::optim::bp::basis_pursuit;
    use crate::problem::{
        gen_design, gen_designs, gen_signals, measure, DesignSharing, SignalScheme,
    };
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn instance(
        g: &Graph,
        d: usize,
        s: usize,
        sp: usize,
        counts: &[usize],
        sharing: DesignSharing,
        noise: f64,
        seed: u64,
    ) -> (Vec<DVector<f64>>, DesignSet, MeasurementSet) {
        let ens = gen_signals(g, d, s, sp, SignalScheme::DisjointPm1, seed).unwrap();
        let designs = gen_designs(counts, d, sharing, seed).unwrap();
        let meas = measure(&designs, &ens, noise, seed).unwrap();
        (ens.node_signals(), designs, meas)
    }

    #[test]
    fn single_node_matches_basis_pursuit() {
        let g = make_path(1).unwrap();
        let (_, designs, meas) = instance(&g, 20, 3, 0, &[10], DesignSharing::Independent, 0.0, 2);
        let res = tvbp(&g, &designs, &meas, BpBackend::Lp).unwrap();
        let direct = basis_pursuit(
            &designs.matrices[0],
            &meas.responses[0],
            BpBackend::Lp,
            1e-8,
        )
        .unwrap();
        assert!((&res.estimates[0] - &direct.x).norm() < 1e-10);
    }

    #[test]
    fn zero_differences_recover_from_few_samples() {
        let g = make_path(4).unwrap();
        // 8-sparse in d=60: one node alone with 14 rows cannot do it
        let (truth, designs, meas) = instance(
            &g,
            60,
            8,
            0,
            &[14, 14, 14, 14],
            DesignSharing::Independent,
            0.0,
            9,
        );
        let mut res = tvbp(&g, &designs, &meas, BpBackend::Lp).unwrap();
        res.score(&truth);
        assert!(res.all_recovered());
        for e in 1..g.n() {
            let block = res.stacked.rows(e * 60, 60);
            assert!(block.amax() < 1e-8);
        }
        let mut ind = independent_bp(&designs, &meas, BpBackend::Lp).unwrap();
        ind.score(&truth);
        assert!(!ind.all_recovered());
    }

    #[test]
    fn stacked_expands_to_estimates() {
        let g = make_balanced_tree(2, 1).unwrap();
        let (_, designs, meas) = instance(
            &g,
            30,
            3,
            2,
            &[20, 12, 12],
            DesignSharing::Independent,
            0.0,
            4,
        );
        let res = tvbp(&g, &designs, &meas, BpBackend::Lp).unwrap();
        let xs = expand_solution(&g, &res.stacked).unwrap();
        for (a, b) in xs.iter().zip(&res.estimates) {
            assert!((a - b).amax() < 1e-12);
        }
        assert!(res.residuals.iter().all(|&r| r < 1e-8));
    }

    #[test]
    fn objective_at_most_true_stacking() {
        for seed in 0..5 {
            let g = make_path(3).unwrap();
            let ens = gen_signals(&g, 40, 4, 2, SignalScheme::DisjointPm1, seed).unwrap();
            let designs = gen_designs(&[25, 10, 10], 40, DesignSharing::Independent, seed).unwrap();
            let meas = measure(&designs, &ens, 0.0, seed).unwrap();
            let mut res = tvbp(&g, &designs, &meas, BpBackend::Lp).unwrap();
            res.score(&ens.node_signals());
            let truth_obj = ens.stacked().lp_norm(1);
            assert!(res.objective <= truth_obj + 1e-8);
            if res.all_recovered() {
                assert!((res.objective - truth_obj).abs() < 1e-6);
            } else {
                assert!(res.objective < truth_obj - 1e-9);
            }
        }
    }

    #[test]
    fn star_surrogate_recovers_path_ensemble() {
        let g = make_path(3).unwrap();
        let star = make_star(3).unwrap();
        let (truth, designs, meas) = instance(
            &g,
            40,
            3,
            1,
            &[30, 20, 20],
            DesignSharing::Independent,
            0.0,
            12,
        );
        let mut res = tvbp(&star, &designs, &meas, BpBackend::Lp).unwrap();
        res.score(&truth);
        assert!(res.all_recovered());
    }

    #[test]
    fn admm_backend_agrees_with_lp() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(
            &g,
            30,
            3,
            2,
            &[18, 10, 10],
            DesignSharing::Independent,
            0.0,
            21,
        );
        let lp = tvbp(&g, &designs, &meas, BpBackend::Lp).unwrap();
        let admm = tvbp(&g, &designs, &meas, BpBackend::Admm).unwrap();
        assert!((lp.objective - admm.objective).abs() < 1e-6 * lp.objective.max(1.0));
    }

    #[test]
    fn noisy_measurements_rejected_by_tvbp() {
        let g = make_path(2).unwrap();
        let (_, designs, meas) =
            instance(&g, 20, 2, 1, &[10, 10], DesignSharing::Independent, 0.1, 1);
        assert!(tvbp(&g, &designs, &meas, BpBackend::Lp).is_err());
    }

    #[test]
    fn tvbpd_limits() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(
            &g,
            30,
            3,
            2,
            &[18, 12, 12],
            DesignSharing::Independent,
            0.0,
            5,
        );
        let cfg = AdmmConfig::default();
        let big = tvbpd(&g, &designs, &meas, 1e6, &cfg).unwrap();
        assert!(big.estimates.iter().all(|x| x.amax() == 0.0));
        let exact = tvbp(&g, &designs, &meas, BpBackend::Lp).unwrap();
        let zero = tvbpd(&g, &designs, &meas, 0.0, &cfg).unwrap();
        for (a, b) in exact.estimates.iter().zip(&zero.estimates) {
            assert!((a - b).amax() < 1e-4);
        }
    }

    #[test]
    fn tvbpd_respects_budget() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(
            &g,
            40,
            3,
            2,
            &[25, 15, 15],
            DesignSharing::SharedNonRoot,
            0.05,
            8,
        );
        let res = tvbpd(&g, &designs, &meas, meas.eta, &AdmmConfig::default()).unwrap();
        let stacked_resid = res.residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
        assert!(stacked_resid <= meas.eta * (1.0 + 1e-6));
    }

    #[test]
    fn independent_full_rank_and_zero() {
        let g = make_path(2).unwrap();
        let (truth, designs, meas) =
            instance(&g, 8, 3, 2, &[8, 10], DesignSharing::Independent, 0.0, 3);
        let mut res = independent_bp(&designs, &meas, BpBackend::Lp).unwrap();
        res.score(&truth);
        assert!(res.all_recovered());
        let zero = MeasurementSet {
            responses: meas
                .responses
                .iter()
                .map(|y| DVector::zeros(y.len()))
                .collect(),
            ..meas.clone()
        };
        let res = independent_bp(&designs, &zero, BpBackend::Lp).unwrap();
        assert!(res.estimates.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn stepwise_zero_differences_copy_root() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(
            &g,
            30,
            3,
            0,
            &[20, 10, 10],
            DesignSharing::Independent,
            0.0,
            6,
        );
        let res = stepwise_bp(&g, &designs, &meas, BpBackend::Lp).unwrap();
        for v in 1..3 {
            assert!((&res.estimates[v] - &res.estimates[0]).amax() < 1e-9);
        }
    }

    #[test]
    fn stepwise_recovers_path_with_small_edges() {
        let (d, s, sp) = (128, 12, 4);
        let nv =
            (2.0 * sp as f64 * (std::f64::consts::E * d as f64 / sp as f64).ln()).round() as usize;
        let g = make_path(3).unwrap();
        let mut ok = 0;
        for seed in 0..5 {
            let (truth, designs, meas) = instance(
                &g,
                d,
                s,
                sp,
                &[80, nv, nv],
                DesignSharing::Independent,
                0.0,
                seed,
            );
            let mut res = stepwise_bp(&g, &designs, &meas, BpBackend::Lp).unwrap();
            res.score(&truth);
            if res.all_recovered() {
                ok += 1;
                assert!(res.residuals.iter().all(|&r| r < 1e-8));
            }
        }
        assert!(ok >= 4, "{ok}/5");
    }

    #[test]
    fn stepwise_flags_corrupted_parent() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(
            &g,
            60,
            5,
            2,
            &[40, 15, 15],
            DesignSharing::Independent,
            0.0,
            17,
        );
        let mut r = rng::stream(1);
        let junk = DVector::from_fn(60, |_, _| r.sample::<f64, _>(StandardNormal));
        let res = stepwise_bp_from(&g, &designs, &meas, BpBackend::Lp, Some(junk)).unwrap();
        assert_eq!(res.status[1], NodeStatus::Suspect);
        assert_ne!(res.status[2], NodeStatus::Ok);
    }

    #[test]
    fn group_lasso_limits() {
        let g = make_path(2).unwrap();
        let (_, designs, meas) =
            instance(&g, 6, 2, 1, &[10, 10], DesignSharing::Independent, 0.0, 2);
        let res = group_lasso(&designs, &meas, 0.0, 5000).unwrap();
        for v in 0..2 {
            let a = &designs.matrices[v];
            let ls = (a.tr_mul(a))
                .cholesky()
                .unwrap()
                .solve(&a.tr_mul(&meas.responses[v]));
            assert!((&res.estimates[v] - ls).amax() < 1e-6);
        }
        let mut gmax: f64 = 0.0;
        for j in 0..6 {
            let col: f64 = (0..2)
                .map(|v| (2.0 * designs.matrices[v].column(j).dot(&meas.responses[v])).powi(2))
                .sum();
            gmax = gmax.max(col.sqrt());
        }
        let res = group_lasso(&designs, &meas, gmax * 1.0001, 100).unwrap();
        assert!(res.estimates.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn group_lasso_objective_not_above_start() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(
            &g,
            40,
            4,
            2,
            &[20, 20, 20],
            DesignSharing::Independent,
            0.05,
            1,
        );
        for lambda in default_lambda_grid() {
            let res = group_lasso(&designs, &meas, lambda, 200).unwrap();
            let start: f64 = meas.responses.iter().map(|y| y.norm_squared()).sum();
            assert!(res.objective <= start);
        }
        let path = group_lasso_path(
            &designs,
            &meas,
            &default_lambda_grid(),
            &GroupLassoConfig::default(),
        )
        .unwrap();
        assert_eq!(path.len(), 9);
    }

    #[test]
    fn lambda_grid_endpoints() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 9);
        assert!((g[0] - 1e-6).abs() < 1e-18 && (g[8] - 1e-2).abs() < 1e-15);
        assert!((g[2] - 1e-5).abs() < 1e-17);
    }

    fn synthetic_grid(
        rows: usize,
        cols: usize,
        lib: &DMatrix<f64>,
        base: &DVector<f64>,
        noise: f64,
        seed: u64,
    ) -> (PixelGrid, Vec<DVector<f64>>) {
        let mut r = rng::stream(seed);
        let d = lib.ncols();
        let mut truth = Vec::new();
        let mut pixels = Vec::new();
        for i in 0..rows * cols {
            let mut x = base.clone();
            if i % 3 == 1 {
                x[r.random_range(0..d)] += 0.5;
            }
            let eps = DVector::from_fn(lib.nrows(), |_, _| {
                noise * r.sample::<f64, _>(StandardNormal)
            });
            pixels.push(lib * &x + eps);
            truth.push(x);
        }
        (PixelGrid::new(rows, cols, pixels).unwrap(), truth)
    }

    #[test]
    fn tiled_constant_image_and_padding() {
        let lib = gen_design(30, 60, 3);
        let mut base = DVector::zeros(60);
        base[4] = 1.0;
        base[20] = 0.5;
        let pix = lib.clone() * &base;
        let grid = PixelGrid::new(3, 3, vec![pix; 9]).unwrap();
        let cfg = AdmmConfig::default();
        let res = tiled_tvbpd(&grid, &lib, 1e-6, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(res.tiles, 4);
        assert!(res.failures.is_empty());
        for c in &res.coefficients {
            assert!((c.as_ref().unwrap() - &base).amax() < 1e-3);
        }
    }

    #[test]
    fn tiled_two_by_two_is_single_tvbpd() {
        let lib = gen_design(30, 60, 5);
        let mut base = DVector::zeros(60);
        base[1] = 1.0;
        let (grid, _) = synthetic_grid(2, 2, &lib, &base, 0.01, 2);
        let cfg = AdmmConfig::default();
        let eta = 0.02;
        let tiled = tiled_tvbpd(&grid, &lib, eta, &cfg, ExecMode::Sequential).unwrap();
        let designs = DesignSet::from_matrices(vec![lib.clone(); 4], true).unwrap();
        let meas = MeasurementSet {
            responses: grid.pixels.clone(),
            noise: vec![DVector::zeros(30); 4],
            eta,
            noise_sd: 0.0,
            seed: 0,
        };
        let direct = tvbpd(&make_star(4).unwrap(), &designs, &meas, eta, &cfg).unwrap();
        for (a, b) in tiled.coefficients.iter().zip(&direct.estimates) {
            assert!((a.as_ref().unwrap() - b).amax() < 1e-9);
        }
    }

    #[test]
    fn tiled_parallel_matches_sequential() {
        let lib = gen_design(30, 60, 8);
        let mut base = DVector::zeros(60);
        base[10] = 1.0;
        base[33] = -0.7;
        let (grid, _) = synthetic_grid(4, 4, &lib, &base, 0.01, 4);
        let cfg = AdmmConfig::default();
        let a = tiled_tvbpd(&grid, &lib, 0.05, &cfg, ExecMode::Sequential).unwrap();
        let b = tiled_tvbpd(&grid, &lib, 0.05, &cfg, ExecMode::Parallel).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn summary_row_shape() {
        let g = make_path(2).unwrap();
        let (truth, designs, meas) =
            instance(&g, 10, 2, 1, &[10, 10], DesignSharing::Independent, 0.0, 1);
        let res = tvbp(&g, &designs, &meas, BpBackend::Lp).unwrap();
        let info = SummaryInfo {
            n: 2,
            d: 10,
            s: 2,
            s_prime: 1,
            n_v: 10,
            seed: 1,
        };
        let row = res.summary_row(&info, &truth);
        assert_eq!(row.split(',').count(), SUMMARY_HEADER.split(',').count());
        assert!(row.starts_with("tvbp,2,10,2,1,10,1,1,"));
        let c = res.to_container();
        assert_eq!(c.vector("stacked").unwrap(), res.stacked);
    }
}
