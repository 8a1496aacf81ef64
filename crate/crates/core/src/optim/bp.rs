//! Basis pursuit and basis pursuit denoising.
//!
//! The ADMM backend solves `min ||z||_1` s.t. `A x - r = y`, `x = z`,
//! `||r||_2 <= eta` (`eta = 0` is plain basis pursuit). The x-step is an exact
//! least-squares solve through `(I + A A^T)^{-1}`, the `z` step soft-thresholds
//! and the `r` step projects onto the `eta`-ball. Every few iterations the
//! current support is polished by a closed-form solve on that support; if the
//! polished point comes with a dual certificate the run stops early.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::optim::linalg::{spectral_norm_sq, GramSolve, LinearOperator};
use crate::optim::lp::{solve_lp, Bound, LpProblem, LpStatus};
use crate::optim::prox::soft_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BpBackend {
    /// Exact two-phase simplex on the split LP (dense, small instances).
    Lp,
    /// Operator-form ADMM with support polishing.
    Admm,
    /// `Lp` up to [`AUTO_LP_MAX_COLUMNS`] columns, `Admm` beyond.
    #[default]
    Auto,
}

pub const AUTO_LP_MAX_COLUMNS: usize = 256;

#[derive(Debug, Clone)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iters: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub over_relaxation: f64,
    /// Attempt support polishing every this many iterations (0 disables).
    pub polish_every: usize,
    /// Residual balancing: rescale `rho` by 2 when one residual exceeds the
    /// other tenfold, during the first this many iterations (0 disables).
    /// Equality-constrained problems only.
    pub adapt_until: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 10.0,
            max_iters: 20_000,
            tol_abs: 1e-10,
            tol_rel: 1e-8,
            over_relaxation: 1.0,
            polish_every: 25,
            adapt_until: 2000,
        }
    }
}

impl AdmmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.tol_abs > 0.0) || !(self.tol_rel > 0.0) {
            return Err(Error::InvalidArgument(
                "rho and tolerances must be positive".into(),
            ));
        }
        if !(self.over_relaxation > 0.0 && self.over_relaxation < 2.0) {
            return Err(Error::InvalidArgument(
                "over-relaxation must lie in (0, 2)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SparseSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// `||A x - y||_2`.
    pub residual: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Primal objective minus the best certified dual value (NaN if none).
    pub gap: f64,
    pub converged: bool,
    pub polished: bool,
}

fn proj_ball(v: DVector<f64>, eta: f64) -> DVector<f64> {
    let n = v.norm();
    if n <= eta {
        v
    } else if eta == 0.0 {
        DVector::zeros(v.len())
    } else {
        v * (eta / n)
    }
}

/// Dual value `mu^T y - eta ||mu||` after scaling `mu` into `||A^T mu||_inf <= 1`.
fn dual_value<O: LinearOperator + ?Sized>(
    a: &O,
    y: &DVector<f64>,
    eta: f64,
    mu: &DVector<f64>,
) -> f64 {
    let inf = a.apply_transpose(mu).amax();
    let scale = if inf > 1.0 { 1.0 / inf } else { 1.0 };
    scale * (mu.dot(y) - eta * mu.norm())
}

struct Polished {
    x: DVector<f64>,
    certificate: Option<DVector<f64>>,
}

/// Largest `|S|^2 * rows` for which a polish is attempted.
const POLISH_FLOPS: f64 = 1e9;

/// Iterations between dual-residual evaluations.
const CHECK_EVERY: usize = 10;

/// Relative magnitudes below which entries of `z` are dropped before polishing.
const POLISH_CUTS: [f64; 3] = [1e-7, 1e-4, 1e-2];

/// Candidate supports of `z`, one per cut, without repeats.
fn polish_supports(z: &DVector<f64>) -> Vec<Vec<usize>> {
    let zmax = z.amax();
    let mut out: Vec<Vec<usize>> = Vec::new();
    if zmax == 0.0 {
        return out;
    }
    for cut in POLISH_CUTS {
        let s: Vec<usize> = (0..z.len()).filter(|&i| z[i].abs() > cut * zmax).collect();
        if !s.is_empty() && out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

/// Closed-form solve on `support` with the signs of `z` fixed.
fn polish<O: LinearOperator + ?Sized>(
    a: &O,
    y: &DVector<f64>,
    eta: f64,
    z: &DVector<f64>,
    support: &[usize],
) -> Option<Polished> {
    let k = support.len() as f64;
    if support.is_empty() || support.len() > a.nrows() || k * k * a.nrows() as f64 > POLISH_FLOPS {
        return None;
    }
    let sigma = DVector::from_fn(support.len(), |k, _| z[support[k]].signum());
    let cols = a.columns(support);
    let gram = cols.tr_mul(&cols);
    let chol = gram.cholesky()?;
    let x_ls = chol.solve(&cols.tr_mul(y));
    let r_ls = y - &cols * &x_ls;
    let w = chol.solve(&sigma);
    let (xs, certificate) = if eta == 0.0 {
        // Least-norm multiplier with A_S^T mu = sigma.
        if r_ls.norm() > 1e-9 * (1.0 + y.norm()) {
            return None;
        }
        (x_ls, Some(&cols * &w))
    } else {
        let aw = &cols * &w;
        let slack = eta * eta - r_ls.norm_squared();
        let aw2 = aw.norm_squared();
        if slack < 0.0 || aw2 == 0.0 {
            return None;
        }
        let t = (slack / aw2).sqrt();
        let xs = &x_ls - &w * t;
        let cert = if t > 0.0 {
            let r = y - &cols * &xs;
            Some(r / t)
        } else {
            None
        };
        (xs, cert)
    };
    if xs.iter().zip(sigma.iter()).any(|(x, s)| x * s <= 0.0) {
        return None;
    }
    let mut x = DVector::zeros(z.len());
    for (k, &i) in support.iter().enumerate() {
        x[i] = xs[k];
    }
    Some(Polished { x, certificate })
}

/// `c * A` without copying `A`.
struct Scaled<'a, O: ?Sized> {
    inner: &'a O,
    c: f64,
}

struct ScaledSolve {
    inner: Box<dyn GramSolve>,
    inv_c2: f64,
}

impl GramSolve for ScaledSolve {
    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.inner.solve(r) * self.inv_c2
    }
}

impl<O: LinearOperator + ?Sized> LinearOperator for Scaled<'_, O> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.apply(x) * self.c
    }
    fn apply_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        self.inner.apply_transpose(r) * self.c
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.inner.to_dense() * self.c
    }
    fn gram(&self) -> DMatrix<f64> {
        self.inner.gram() * (self.c * self.c)
    }
    fn shifted_gram_solver(&self, shift: f64) -> Result<Box<dyn GramSolve>> {
        let c2 = self.c * self.c;
        Ok(Box::new(ScaledSolve {
            inner: self.inner.shifted_gram_solver(shift / c2)?,
            inv_c2: 1.0 / c2,
        }))
    }
    fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        self.inner.columns(cols) * self.c
    }
}

/// Core ADMM loop. Always returns the best available point; `converged`
/// tells whether the stopping rule (or a certified polish) was met.
/// The operator is rescaled to unit spectral norm internally.
pub fn admm_l1<O: LinearOperator + ?Sized>(
    a: &O,
    y: &DVector<f64>,
    eta: f64,
    cfg: &AdmmConfig,
) -> Result<SparseSolution> {
    cfg.validate()?;
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument("eta must be non-negative".into()));
    }
    let norm_sq = spectral_norm_sq(a, 30);
    if !(norm_sq > 0.0) {
        return admm_l1_unscaled(a, y, eta, cfg);
    }
    let c = 1.0 / norm_sq.sqrt();
    let scaled = Scaled { inner: a, c };
    let mut sol = admm_l1_unscaled(&scaled, &(y * c), eta * c, cfg)?;
    sol.residual /= c;
    sol.primal_residual /= c;
    Ok(sol)
}

fn admm_l1_unscaled<O: LinearOperator + ?Sized>(
    a: &O,
    y: &DVector<f64>,
    eta: f64,
    cfg: &AdmmConfig,
) -> Result<SparseSolution> {
    cfg.validate()?;
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument("eta must be non-negative".into()));
    }
    let (m, p) = (a.nrows(), a.ncols());
    if y.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "A has {m} rows, y has {}",
            y.len()
        )));
    }
    if y.norm() <= eta {
        return Ok(SparseSolution {
            x: DVector::zeros(p),
            objective: 0.0,
            residual: y.norm(),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
            converged: true,
            polished: false,
        });
    }
    let solver = a.shifted_gram_solver(1.0)?;
    let mut beta = cfg.rho;
    let alpha = cfg.over_relaxation;
    let ynorm = y.norm();
    let feas_limit = if eta > 0.0 {
        eta * (1.0 + 1e-6)
    } else {
        cfg.tol_rel.max(1e-12) * ynorm
    };
    let mut x = DVector::zeros(p);
    let mut z = DVector::zeros(p);
    let mut r = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let mut w = DVector::zeros(p);
    let (mut pri, mut dua) = (f64::INFINITY, f64::INFINITY);
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut tried: HashSet<Vec<(usize, bool)>> = HashSet::new();
    for it in 1..=cfg.max_iters {
        let q = a.apply_transpose(&(y + &r - &u)) + (&z - &w);
        // (I + A A^T)^{-1} A q is also A x.
        let ax = solver.solve(&a.apply(&q));
        x = &q - a.apply_transpose(&ax);
        let ax_h = &ax * alpha + (&r + y) * (1.0 - alpha);
        let x_h = &x * alpha + &z * (1.0 - alpha);
        let z_old = z.clone();
        let r_old = r.clone();
        z = soft_threshold(&(&x_h + &w), 1.0 / beta);
        r = proj_ball(&ax_h - y + &u, eta);
        u += &ax_h - &r - y;
        w += &x_h - &z;

        pri = ((&ax - &r - y).norm_squared() + (&x - &z).norm_squared()).sqrt();
        let eps_pri = ((m + p) as f64).sqrt() * cfg.tol_abs
            + cfg.tol_rel
                * (ax.norm_squared() + x.norm_squared())
                    .sqrt()
                    .max((r.norm_squared() + z.norm_squared()).sqrt())
                    .max(ynorm);
        let check = it % CHECK_EVERY == 0 || it == cfg.max_iters;
        if check {
            dua = beta * (a.apply_transpose(&(&r - &r_old)) + (&z - &z_old)).norm();
            if eta == 0.0 && it <= cfg.adapt_until {
                let factor = if pri > 10.0 * dua {
                    2.0
                } else if dua > 10.0 * pri {
                    0.5
                } else {
                    1.0
                };
                if factor != 1.0 {
                    beta *= factor;
                    u /= factor;
                    w /= factor;
                }
            }
        }

        let try_polish =
            cfg.polish_every > 0 && (it % cfg.polish_every == 0) && pri < 1e-2 * (1.0 + ynorm);
        if try_polish {
            let fresh: Vec<Vec<usize>> = polish_supports(&z)
                .into_iter()
                .filter(|s| tried.insert(s.iter().map(|&i| (i, z[i] > 0.0)).collect()))
                .collect();
            for pol in fresh.iter().filter_map(|s| polish(a, y, eta, &z, s)) {
                let obj = pol.x.lp_norm(1);
                let resid = (a.apply(&pol.x) - y).norm();
                if resid <= feas_limit.max(1e-12 * (1.0 + ynorm)) {
                    let mut dual_best = dual_value(a, y, eta, &(&u * (-beta)));
                    if let Some(cert) = &pol.certificate {
                        dual_best = dual_best.max(dual_value(a, y, eta, cert));
                    }
                    let gap = obj - dual_best;
                    if gap <= 1e-9 * (1.0 + obj) {
                        return Ok(SparseSolution {
                            objective: obj,
                            residual: resid,
                            x: pol.x,
                            iterations: it,
                            primal_residual: pri,
                            dual_residual: dua,
                            gap,
                            converged: true,
                            polished: true,
                        });
                    }
                    if best.as_ref().is_none_or(|(_, o)| obj < *o) {
                        best = Some((pol.x, obj));
                    }
                }
            }
        }
        if check
            && pri <= eps_pri
            && dua
                <= (p as f64).sqrt() * cfg.tol_abs
                    + cfg.tol_rel * beta * (a.apply_transpose(&u) + &w).norm()
        {
            let resid = (a.apply(&z) - y).norm();
            if resid <= feas_limit {
                let obj = z.lp_norm(1);
                let gap = obj - dual_value(a, y, eta, &(&u * (-beta)));
                return Ok(SparseSolution {
                    x: z,
                    objective: obj,
                    residual: resid,
                    iterations: it,
                    primal_residual: pri,
                    dual_residual: dua,
                    gap,
                    converged: true,
                    polished: false,
                });
            }
        }
    }
    let (x_out, polished) = match best {
        Some((bx, _)) => (bx, true),
        None => (z, false),
    };
    let obj = x_out.lp_norm(1);
    let resid = (a.apply(&x_out) - y).norm();
    let gap = obj - dual_value(a, y, eta, &(&u * (-beta)));
    let _ = x;
    Ok(SparseSolution {
        x: x_out,
        objective: obj,
        residual: resid,
        iterations: cfg.max_iters,
        primal_residual: pri,
        dual_residual: dua,
        gap,
        converged: false,
        polished,
    })
}

fn not_converged(sol: &SparseSolution) -> Error {
    Error::NotConverged {
        iterations: sol.iterations,
        primal: sol.primal_residual,
        dual: sol.dual_residual,
    }
}

/// `min ||x||_1` s.t. `A x = y` through the split LP `x = p - q`.
pub fn basis_pursuit_lp(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<SparseSolution> {
    let (m, p) = a.shape();
    if y.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "A has {m} rows, y has {}",
            y.len()
        )));
    }
    let mut split = DMatrix::zeros(m, 2 * p);
    split.view_mut((0, 0), (m, p)).copy_from(a);
    split.view_mut((0, p), (m, p)).copy_from(&(-a));
    let lp = LpProblem::new(
        DVector::from_element(2 * p, 1.0),
        split,
        y.clone(),
        vec![Bound::NonNegative; 2 * p],
    )?;
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible("A x = y has no solution".into())),
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let x = DVector::from_fn(p, |i, _| sol.x[i] - sol.x[p + i]);
    let residual = (a * &x - y).norm();
    let objective = x.lp_norm(1);
    Ok(SparseSolution {
        gap: objective - sol.duals.dot(y),
        x,
        objective,
        residual,
        iterations: sol.pivots,
        primal_residual: residual,
        dual_residual: 0.0,
        converged: true,
        polished: false,
    })
}

/// `min ||x||_1` s.t. `A x = y`. `tol` bounds the relative feasibility residual.
pub fn basis_pursuit<O: LinearOperator + ?Sized>(
    a: &O,
    y: &DVector<f64>,
    backend: BpBackend,
    tol: f64,
) -> Result<SparseSolution> {
    basis_pursuit_with(
        a,
        y,
        backend,
        &AdmmConfig {
            tol_rel: tol,
            ..AdmmConfig::default()
        },
    )
}

pub fn basis_pursuit_with<O: LinearOperator + ?Sized>(
    a: &O,
    y: &DVector<f64>,
    backend: BpBackend,
    cfg: &AdmmConfig,
) -> Result<SparseSolution> {
    let backend = match backend {
        BpBackend::Auto if a.ncols() <= AUTO_LP_MAX_COLUMNS => BpBackend::Lp,
        BpBackend::Auto => BpBackend::Admm,
        b => b,
    };
    let sol = match backend {
        BpBackend::Lp => basis_pursuit_lp(&a.to_dense(), y)?,
        _ => admm_l1(a, y, 0.0, cfg)?,
    };
    if !sol.converged {
        return Err(not_converged(&sol));
    }
    let ynorm = y.norm();
    if sol.residual > cfg.tol_rel.max(1e-9) * ynorm.max(1e-300) && sol.residual > 1e-12 {
        return Err(Error::Infeasible(format!(
            "basis pursuit residual {:.3e} exceeds tolerance",
            sol.residual
        )));
    }
    Ok(sol)
}

/// `min ||x||_1` s.t. `||A x - y||_2 <= eta`.
pub fn bpdn<O: LinearOperator + ?Sized>(
    a: &O,
    y: &DVector<f64>,
    eta: f64,
    cfg: &AdmmConfig,
) -> Result<SparseSolution> {
    let sol = admm_l1(a, y, eta, cfg)?;
    if !sol.converged {
        return Err(not_converged(&sol));
    }
    Ok(sol)
}
