//! Dense two-phase tableau simplex.
//!
//! Entering variables are chosen by Dantzig's most-negative reduced cost until
//! a run of degenerate pivots is seen, after which Bland's smallest-index rule
//! is used for the rest of the phase. The leaving row always breaks
//! ratio ties by smallest basic index. At the end the basic solution is
//! recomputed from the original columns with an LU solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    NonNegative,
    Free,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub cost: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b: DVector<f64>,
    pub bounds: Vec<Bound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Equality multipliers `y` with `c - A^T y >= 0` on non-negative variables
    /// and `= 0` on free ones, at an optimal basis.
    pub duals: DVector<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub pivot_tol: f64,
    pub feas_tol: f64,
    /// Hard cap on pivots across both phases.
    pub max_pivots: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
    /// Relative size of the phase-2 right-hand-side perturbation (0 disables).
    pub perturbation: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            pivot_tol: 1e-9,
            feas_tol: 1e-7,
            max_pivots: 0,
            degenerate_switch: 50,
            perturbation: 1e-7,
        }
    }
}

impl LpProblem {
    pub fn new(
        cost: DVector<f64>,
        a_eq: DMatrix<f64>,
        b: DVector<f64>,
        bounds: Vec<Bound>,
    ) -> Result<Self> {
        if a_eq.ncols() != cost.len() || bounds.len() != cost.len() || a_eq.nrows() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "LP with {} costs, {} bounds, A {}x{}, b {}",
                cost.len(),
                bounds.len(),
                a_eq.nrows(),
                a_eq.ncols(),
                b.len()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "LP right-hand side must be finite".into(),
            ));
        }
        Ok(LpProblem {
            cost,
            a_eq,
            b,
            bounds,
        })
    }
}

struct Tableau {
    rows: usize,
    /// structural + artificial columns, rhs stored separately
    cols: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
    /// Unperturbed right-hand side, carried through pivots while `rhs` is perturbed.
    shadow: Option<Vec<f64>>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64], obj_val: &mut f64) {
        let cols = self.cols;
        let p = self.at(r, c);
        {
            let row = &mut self.data[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v /= p;
            }
            row[c] = 1.0;
        }
        self.rhs[r] /= p;
        if let Some(sh) = self.shadow.as_mut() {
            sh[r] /= p;
            let v = sh[r];
            for (i, x) in sh.iter_mut().enumerate() {
                if i != r {
                    *x -= self.data[i * cols + c] * v;
                }
            }
        }
        let (pivot_row, pivot_rhs) = (self.data[r * cols..(r + 1) * cols].to_vec(), self.rhs[r]);
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.data[i * cols + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[i * cols..(i + 1) * cols];
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            row[c] = 0.0;
            self.rhs[i] -= f * pivot_rhs;
        }
        let f = obj[c];
        if f != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            obj[c] = 0.0;
            *obj_val -= f * pivot_rhs;
        }
        self.basis[r] = c;
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

/// Run simplex iterations on `t` with reduced-cost row `obj` (minimisation).
/// Only columns with `allowed[j]` may enter.
fn run_phase(
    t: &mut Tableau,
    obj: &mut [f64],
    obj_val: &mut f64,
    allowed: &[bool],
    opts: &SimplexOptions,
    pivots: &mut usize,
    max_pivots: usize,
) -> Result<PhaseEnd> {
    let mut degenerate_run = 0usize;
    let mut bland = false;
    loop {
        bland |= degenerate_run >= opts.degenerate_switch;
        let mut enter = None;
        let mut best = -opts.pivot_tol;
        for j in 0..t.cols {
            if !allowed[j] || obj[j] >= -opts.pivot_tol {
                continue;
            }
            if bland {
                enter = Some(j);
                break;
            }
            if obj[j] < best {
                best = obj[j];
                enter = Some(j);
            }
        }
        let Some(c) = enter else {
            return Ok(PhaseEnd::Optimal);
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..t.rows {
            let a = t.at(i, c);
            if a > opts.pivot_tol {
                let ratio = t.rhs[i].max(0.0) / a;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - 1e-12
                            || (ratio <= best_ratio + 1e-12 && t.basis[i] < t.basis[l])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            return Ok(PhaseEnd::Unbounded);
        };
        let gain = best_ratio * -obj[c];
        if gain <= 1e-11 * obj_val.abs().max(1.0) {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        t.pivot(r, c, obj, obj_val);
        *pivots += 1;
        if *pivots > max_pivots {
            return Err(Error::CyclingGuard(*pivots));
        }
    }
}

/// Raise the basic values of the rows not in `skip` by small distinct amounts,
/// keeping the exact values in the shadow.
fn perturb(t: &mut Tableau, skip: &[bool], size: f64) {
    if size <= 0.0 {
        return;
    }
    t.shadow = Some(t.rhs.clone());
    for r in (0..t.rows).filter(|&r| !skip[r]) {
        let jitter = 1.0 + ((r as u64).wrapping_mul(2654435761) % 1024) as f64 / 1024.0;
        t.rhs[r] += size * (1.0 + t.rhs[r].abs()) * jitter;
    }
}

/// Swap the exact values back in and repair feasibility.
fn restore(
    t: &mut Tableau,
    obj: &mut [f64],
    obj_val: &mut f64,
    allowed: &[bool],
    opts: &SimplexOptions,
    pivots: &mut usize,
    max_pivots: usize,
) -> Result<()> {
    let Some(sh) = t.shadow.take() else {
        return Ok(());
    };
    t.rhs = sh;
    dual_cleanup(t, obj, obj_val, allowed, opts, pivots, max_pivots)
}

/// Dual simplex pivots from a dual-feasible basis until the basic values are
/// non-negative.
fn dual_cleanup(
    t: &mut Tableau,
    obj: &mut [f64],
    obj_val: &mut f64,
    allowed: &[bool],
    opts: &SimplexOptions,
    pivots: &mut usize,
    max_pivots: usize,
) -> Result<()> {
    loop {
        let mut leave = None;
        let mut worst = -1e-12;
        for i in 0..t.rows {
            if t.rhs[i] < worst {
                worst = t.rhs[i];
                leave = Some(i);
            }
        }
        let Some(r) = leave else {
            return Ok(());
        };
        let mut enter = None;
        let mut best = f64::INFINITY;
        for j in 0..t.cols {
            let a = t.at(r, j);
            if !allowed[j] || a >= -opts.pivot_tol {
                continue;
            }
            let ratio = obj[j].max(0.0) / -a;
            if ratio < best - 1e-12 {
                best = ratio;
                enter = Some(j);
            }
        }
        let Some(c) = enter else {
            return Ok(());
        };
        t.pivot(r, c, obj, obj_val);
        *pivots += 1;
        if *pivots > max_pivots {
            return Err(Error::CyclingGuard(*pivots));
        }
    }
}

pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    solve_lp_with(p, &SimplexOptions::default())
}

pub fn solve_lp_with(p: &LpProblem, opts: &SimplexOptions) -> Result<LpSolution> {
    let m = p.a_eq.nrows();
    let n = p.cost.len();
    // Split free variables into (plus, minus) column pairs.
    let mut col_map: Vec<(usize, f64)> = Vec::with_capacity(2 * n);
    for (j, b) in p.bounds.iter().enumerate() {
        col_map.push((j, 1.0));
        if *b == Bound::Free {
            col_map.push((j, -1.0));
        }
    }
    let ns = col_map.len();
    let cols = ns + m;
    let mut data = vec![0.0; m * cols];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        let sign = if p.b[i] < 0.0 { -1.0 } else { 1.0 };
        rhs[i] = sign * p.b[i];
        for (k, &(j, s)) in col_map.iter().enumerate() {
            data[i * cols + k] = sign * s * p.a_eq[(i, j)];
        }
        data[i * cols + ns + i] = 1.0;
    }
    let mut t = Tableau {
        rows: m,
        cols,
        data,
        rhs,
        shadow: None,
        basis: (ns..ns + m).collect(),
    };
    let max_pivots = if opts.max_pivots > 0 {
        opts.max_pivots
    } else {
        50 * (m + cols) + 1000
    };
    let mut pivots = 0;

    // Phase 1: minimise the sum of artificials.
    let mut obj = vec![0.0; cols];
    let mut obj_val = 0.0;
    for i in 0..m {
        for k in 0..ns {
            obj[k] -= t.at(i, k);
        }
        obj_val -= t.rhs[i];
    }
    let allowed: Vec<bool> = (0..cols).map(|k| k < ns).collect();
    perturb(&mut t, &vec![false; m], opts.perturbation);
    run_phase(
        &mut t,
        &mut obj,
        &mut obj_val,
        &allowed,
        opts,
        &mut pivots,
        max_pivots,
    )?;
    restore(&mut t, &mut obj, &mut obj_val, &allowed, opts, &mut pivots, max_pivots)?;
    let scale = 1.0 + p.b.amax();
    let infeasibility: f64 = (0..m).filter(|&r| t.basis[r] >= ns).map(|r| t.rhs[r].abs()).sum();
    if infeasibility > opts.feas_tol * scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: DVector::zeros(n),
            objective: f64::NAN,
            duals: DVector::zeros(m),
            pivots,
        });
    }
    // Drive remaining artificials out of the basis; rows where that is
    // impossible are redundant and are dropped from the dual solve.
    let mut redundant = vec![false; m];
    for r in 0..m {
        if t.basis[r] >= ns {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..ns {
                let a = t.at(r, k).abs();
                if a > opts.pivot_tol && best.is_none_or(|(_, b)| a > b) {
                    best = Some((k, a));
                }
            }
            match best {
                Some((k, _)) => {
                    let mut dummy = vec![0.0; cols];
                    let mut dv = 0.0;
                    t.pivot(r, k, &mut dummy, &mut dv);
                    pivots += 1;
                }
                None => redundant[r] = true,
            }
        }
    }

    // Phase 2: reduced costs from the structural costs.
    let cost_of = |k: usize| -> f64 {
        if k < ns {
            let (j, s) = col_map[k];
            s * p.cost[j]
        } else {
            0.0
        }
    };
    perturb(&mut t, &redundant, opts.perturbation);
    let mut obj: Vec<f64> = (0..cols).map(cost_of).collect();
    let mut obj_val = 0.0;
    for r in 0..m {
        let cb = cost_of(t.basis[r]);
        if cb != 0.0 {
            for k in 0..cols {
                obj[k] -= cb * t.at(r, k);
            }
            obj_val -= cb * t.rhs[r];
        }
    }
    match run_phase(
        &mut t,
        &mut obj,
        &mut obj_val,
        &allowed,
        opts,
        &mut pivots,
        max_pivots,
    )? {
        PhaseEnd::Unbounded => {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: DVector::zeros(n),
                objective: f64::NEG_INFINITY,
                duals: DVector::zeros(m),
                pivots,
            })
        }
        PhaseEnd::Optimal => {}
    }
    restore(&mut t, &mut obj, &mut obj_val, &allowed, opts, &mut pivots, max_pivots)?;

    // Recompute the basic solution from original data.
    let live: Vec<usize> = (0..m).filter(|&r| !redundant[r]).collect();
    let mut xs = vec![0.0; ns];
    for r in 0..m {
        if t.basis[r] < ns {
            xs[t.basis[r]] = t.rhs[r].max(0.0);
        }
    }
    let basic: Vec<usize> = live
        .iter()
        .map(|&r| t.basis[r])
        .filter(|&k| k < ns)
        .collect();
    let column = |k: usize, i: usize| {
        let (j, s) = col_map[k];
        s * p.a_eq[(i, j)]
    };
    let mut duals = DVector::zeros(m);
    if basic.len() == live.len() && !live.is_empty() {
        let bmat = DMatrix::from_fn(live.len(), basic.len(), |a, b| column(basic[b], live[a]));
        let lu = bmat.clone().lu();
        let rhs_live = DVector::from_fn(live.len(), |a, _| p.b[live[a]]);
        if let Some(xb) = lu.solve(&rhs_live) {
            let resid = (&bmat * &xb - &rhs_live).amax();
            if resid <= 1e-9 * scale && xb.iter().all(|v| *v > -1e-9 * scale) {
                for (b, &k) in basic.iter().enumerate() {
                    xs[k] = xb[b].max(0.0);
                }
            }
        }
        let cb = DVector::from_fn(basic.len(), |b, _| cost_of(basic[b]));
        if let Some(yl) = bmat.transpose().lu().solve(&cb) {
            for (a, &r) in live.iter().enumerate() {
                duals[r] = yl[a];
            }
        }
    }
    let mut x = DVector::zeros(n);
    for (k, &(j, s)) in col_map.iter().enumerate() {
        x[j] += s * xs[k];
    }
    let objective = p.cost.dot(&x);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        pivots,
    })
}

/// Reduced costs `c - A^T y` for a dual vector.
pub fn reduced_costs(p: &LpProblem, duals: &DVector<f64>) -> DVector<f64> {
    &p.cost - p.a_eq.tr_mul(duals)
}
