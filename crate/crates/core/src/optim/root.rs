//! Root-node subproblem `min ||x||_1 + nu^T x + c ||x||^2  s.t.  A x = b`,
//! solved by Barzilai-Borwein ascent on its smooth concave dual
//!
//! `D(lambda) = lambda^T b + sum_i inf_x (|x| + u_i x + c x^2)`,
//! `u = nu - A^T lambda`, `grad D = b - A x(lambda)`,
//!
//! where `x(lambda) = -soft(u, 1) / (2c)` is the unique inner minimiser.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::optim::linalg::spectral_norm_sq;
use crate::optim::prox::soft;

#[derive(Debug, Clone)]
pub struct BbConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// First step length; non-positive means `1 / L` with `L = ||A||^2 / (2c)`.
    pub initial_step: f64,
    pub warm_start: Option<DVector<f64>>,
    /// Backtrack until the dual objective does not decrease.
    pub monotone: bool,
}

impl Default for BbConfig {
    fn default() -> Self {
        BbConfig {
            max_iters: 200,
            grad_tol: 1e-10,
            initial_step: 0.0,
            warm_start: None,
            monotone: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RootSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub dual_objective: f64,
    pub converged: bool,
    /// Dual values at accepted iterates (only recorded in monotone mode).
    pub dual_trace: Vec<f64>,
}

/// The closed-form inner minimiser for a given `u`.
pub fn primal_from_u(u: &DVector<f64>, c: f64) -> DVector<f64> {
    u.map(|ui| -soft(ui, 1.0) / (2.0 * c))
}

struct Dual<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    nu: &'a DVector<f64>,
    c: f64,
}

impl Dual<'_> {
    /// Returns `(x(lambda), gradient, dual value)`.
    fn eval(&self, lambda: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
        let u = self.nu - self.a.tr_mul(lambda);
        let x = primal_from_u(&u, self.c);
        let grad = self.b - self.a * &x;
        let phi: f64 = u
            .iter()
            .map(|ui| {
                let e = (ui.abs() - 1.0).max(0.0);
                -e * e / (4.0 * self.c)
            })
            .sum();
        (x, grad, lambda.dot(self.b) + phi)
    }
}

/// Runs the ascent and always returns the last iterate; `converged` reports
/// whether the gradient tolerance was met.
pub fn root_subproblem_report(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    nu: &DVector<f64>,
    c: f64,
    cfg: &BbConfig,
) -> Result<RootSolution> {
    if a.nrows() != b.len() || a.ncols() != nu.len() {
        return Err(Error::ShapeMismatch(format!(
            "A is {}x{}, b {}, nu {}",
            a.nrows(),
            a.ncols(),
            b.len(),
            nu.len()
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("c must be positive".into()));
    }
    let dual = Dual { a, b, nu, c };
    let lipschitz = (spectral_norm_sq(a, 30) * 1.05 / (2.0 * c)).max(f64::MIN_POSITIVE);
    let safe_step = 1.0 / lipschitz;
    let mut lambda = match &cfg.warm_start {
        Some(l) if l.len() == b.len() => l.clone(),
        _ => DVector::zeros(b.len()),
    };
    let (mut x, mut grad, mut value) = dual.eval(&lambda);
    let mut gnorm = grad.norm();
    let mut best_gnorm = gnorm;
    let mut step = if cfg.initial_step > 0.0 {
        cfg.initial_step
    } else {
        safe_step
    };
    let mut dual_trace = Vec::new();
    if cfg.monotone {
        dual_trace.push(value);
    }
    let mut iterations = 0;
    while gnorm > cfg.grad_tol && iterations < cfg.max_iters {
        iterations += 1;
        let mut trial = &lambda + &grad * step;
        let (mut tx, mut tg, mut tv) = dual.eval(&trial);
        if cfg.monotone {
            let mut tries = 0;
            while tv < value && tries < 60 {
                step *= 0.5;
                trial = &lambda + &grad * step;
                (tx, tg, tv) = dual.eval(&trial);
                tries += 1;
            }
            if tv < value {
                // No ascent possible at this precision.
                break;
            }
        } else if tg.norm() > 10.0 * best_gnorm {
            // Non-monotone safeguard: fall back to a plain gradient step.
            step = safe_step;
            trial = &lambda + &grad * step;
            (tx, tg, tv) = dual.eval(&trial);
        }
        let s = &trial - &lambda;
        let y = &grad - &tg;
        let sy = s.dot(&y);
        step = if sy > 0.0 {
            if iterations % 2 == 1 {
                s.norm_squared() / sy
            } else {
                sy / y.norm_squared()
            }
        } else {
            safe_step
        };
        step = step.clamp(safe_step * 1e-3, safe_step * 1e8);
        lambda = trial;
        x = tx;
        grad = tg;
        value = tv;
        gnorm = grad.norm();
        best_gnorm = best_gnorm.min(gnorm);
        if cfg.monotone {
            dual_trace.push(value);
        }
    }
    Ok(RootSolution {
        x,
        lambda,
        iterations,
        grad_norm: gnorm,
        dual_objective: value,
        converged: gnorm <= cfg.grad_tol,
        dual_trace,
    })
}

/// Like [`root_subproblem_report`] but non-convergence is an error.
pub fn root_subproblem(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    nu: &DVector<f64>,
    c: f64,
    cfg: &BbConfig,
) -> Result<RootSolution> {
    let sol = root_subproblem_report(a, b, nu, c, cfg)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            iterations: sol.iterations,
            primal: sol.grad_norm,
            dual: 0.0,
        });
    }
    Ok(sol)
}

pub fn root_objective(x: &DVector<f64>, nu: &DVector<f64>, c: f64) -> f64 {
    x.lp_norm(1) + nu.dot(x) + c * x.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::lp::{solve_lp, Bound, LpProblem, LpStatus};
    use crate::problem::gen_design;
    use rand::Rng;

    #[test]
    fn closed_form_branches() {
        let u = DVector::from_vec(vec![-3.0, 0.0, 3.0]);
        assert_eq!(
            primal_from_u(&u, 1.0),
            DVector::from_vec(vec![1.0, 0.0, -1.0])
        );
    }

    #[test]
    fn zero_data_gives_zero() {
        let a = gen_design(3, 5, 1);
        let sol = root_subproblem(
            &a,
            &DVector::zeros(3),
            &DVector::zeros(5),
            2.0,
            &BbConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.x, DVector::zeros(5));
    }

    /// Kelley cutting planes on the epigraph of `c x_i^2`, each round an LP:
    /// min 1^T(p + q) + nu^T(p - q) + c 1^T t
    /// s.t. A (p - q) = b,  t_i >= 2 g x_i - g^2 for every cut point g.
    fn cutting_plane_objective(
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        nu: &DVector<f64>,
        c: f64,
    ) -> f64 {
        let (m, n) = a.shape();
        let mut cuts: Vec<Vec<f64>> = vec![vec![-2.0, -1.0, 0.0, 1.0, 2.0]; n];
        let mut last = f64::NAN;
        for _ in 0..60 {
            let rows: usize = m + cuts.iter().map(|c| c.len()).sum::<usize>();
            // variables: p (n), q (n), t (n, free), slacks (one per cut)
            let ncut = rows - m;
            let nv = 3 * n + ncut;
            let mut amat = DMatrix::zeros(rows, nv);
            let mut rhs = DVector::zeros(rows);
            amat.view_mut((0, 0), (m, n)).copy_from(a);
            amat.view_mut((0, n), (m, n)).copy_from(&(-a));
            rhs.rows_mut(0, m).copy_from(b);
            let mut row = m;
            for (i, pts) in cuts.iter().enumerate() {
                for &g in pts {
                    // t_i - 2g (p_i - q_i) - slack = -g^2
                    amat[(row, 2 * n + i)] = 1.0;
                    amat[(row, i)] = -2.0 * g;
                    amat[(row, n + i)] = 2.0 * g;
                    amat[(row, 3 * n + row - m)] = -1.0;
                    rhs[row] = -g * g;
                    row += 1;
                }
            }
            let mut cost = DVector::zeros(nv);
            for i in 0..n {
                cost[i] = 1.0 + nu[i];
                cost[n + i] = 1.0 - nu[i];
                cost[2 * n + i] = c;
            }
            let mut bounds = vec![Bound::NonNegative; nv];
            for bd in bounds.iter_mut().skip(2 * n).take(n) {
                *bd = Bound::Free;
            }
            let sol = solve_lp(&LpProblem::new(cost, amat, rhs, bounds).unwrap()).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal);
            let x = DVector::from_fn(n, |i, _| sol.x[i] - sol.x[n + i]);
            last = sol.objective;
            let exact = root_objective(&x, nu, c);
            if exact - last < 1e-7 {
                break;
            }
            for i in 0..n {
                cuts[i].push(x[i]);
            }
        }
        last
    }

    #[test]
    fn matches_cutting_plane_oracle_and_kkt() {
        let a = gen_design(4, 6, 11);
        let mut r = crate::rng::stream(11);
        let nu = DVector::from_fn(6, |_, _| r.random_range(-2.0..2.0));
        let x0 = DVector::from_fn(6, |_, _| r.random_range(-1.0..1.0));
        let b = &a * x0;
        let c = 5.0;
        let cfg = BbConfig {
            max_iters: 5000,
            ..Default::default()
        };
        let sol = root_subproblem(&a, &b, &nu, c, &cfg).unwrap();
        assert!((&a * &sol.x - &b).norm() <= 1e-6);
        let oracle = cutting_plane_objective(&a, &b, &nu, c);
        let got = root_objective(&sol.x, &nu, c);
        assert!((got - oracle).abs() < 1e-3, "bb {got} vs lp {oracle}");
        // weak duality sandwich
        assert!(sol.dual_objective <= got + 1e-8);
        assert!(got - sol.dual_objective < 1e-6);
    }

    #[test]
    fn monotone_mode_never_decreases_dual() {
        let a = gen_design(5, 12, 3);
        let b = &a * DVector::from_fn(12, |i, _| if i % 4 == 0 { 1.0 } else { 0.0 });
        let nu = DVector::from_fn(12, |i, _| (i as f64).sin());
        let cfg = BbConfig {
            max_iters: 3000,
            monotone: true,
            ..Default::default()
        };
        let sol = root_subproblem_report(&a, &b, &nu, 0.5, &cfg).unwrap();
        assert!(sol.dual_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(sol.grad_norm < 1e-6);
    }

    #[test]
    fn reports_non_convergence() {
        let a = gen_design(5, 12, 3);
        let b = &a * DVector::from_element(12, 1.0);
        let cfg = BbConfig {
            max_iters: 1,
            ..Default::default()
        };
        assert!(matches!(
            root_subproblem(&a, &b, &DVector::zeros(12), 1.0, &cfg),
            Err(Error::NotConverged { iterations: 1, .. })
        ));
    }

    #[test]
    fn warm_start_from_optimum_is_immediate() {
        let a = gen_design(4, 8, 5);
        let b = &a * DVector::from_fn(8, |i, _| if i == 2 { 1.5 } else { 0.0 });
        let nu = DVector::zeros(8);
        let cfg = BbConfig {
            max_iters: 10_000,
            ..Default::default()
        };
        let first = root_subproblem(&a, &b, &nu, 1.0, &cfg).unwrap();
        let warm = BbConfig {
            warm_start: Some(first.lambda.clone()),
            ..cfg
        };
        let again = root_subproblem(&a, &b, &nu, 1.0, &warm).unwrap();
        assert_eq!(again.iterations, 0);
    }
}
