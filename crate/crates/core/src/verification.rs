//! Brute-force oracles for small instances: restricted isometry constants,
//! the restricted null space property, the kernel condition of the augmented
//! system, a shelling inequality, and order-level sample-size thresholds.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::graph::{graph_metrics, path_to_root, Graph};
use crate::optim::bp::basis_pursuit_lp;
use crate::optim::lp::{solve_lp, Bound, LpProblem, LpStatus};
use crate::reformulation::AugmentedSystem;
use crate::rng;

pub const RIP_BUDGET: u128 = 1_000_000;
pub const RNSP_MAX_SUPPORT: usize = 16;
pub const RNSP_MARGIN: f64 = 1e-9;
pub const DENSE_BUDGET: usize = 4096;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / 1024 {
            return u128::MAX;
        }
    }
    acc
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RipReport {
    pub k: usize,
    pub delta: f64,
    pub worst_support: Vec<usize>,
}

/// `delta_k = max_T max(lambda_max(A_T^T A_T) - 1, 1 - lambda_min(A_T^T A_T))`
/// over all supports of size `k`.
pub fn rip_constant(a: &DMatrix<f64>, k: usize) -> Result<RipReport> {
    rip_constant_with(a, k, ExecMode::default())
}

pub fn rip_constant_with(a: &DMatrix<f64>, k: usize, mode: ExecMode) -> Result<RipReport> {
    let d = a.ncols();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= {d}, got {k}"
        )));
    }
    let count = binomial(d, k);
    if count > RIP_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "C({d},{k}) = {count} supports exceeds {RIP_BUDGET}"
        )));
    }
    let supports = combinations(d, k);
    let deltas = exec::map(mode, &supports, |t| {
        let sub = a.select_columns(t);
        let eig = sub.tr_mul(&sub).symmetric_eigenvalues();
        let hi = eig.max() - 1.0;
        let lo = 1.0 - eig.min();
        hi.max(lo).max(0.0)
    });
    let mut best = 0;
    for (i, &v) in deltas.iter().enumerate() {
        if v > deltas[best] {
            best = i;
        }
    }
    Ok(RipReport {
        k,
        delta: deltas[best],
        worst_support: supports[best].clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnspReport {
    pub support: Vec<usize>,
    /// `max ||x_S||_1` over kernel vectors with `||x||_1 = 1`.
    pub max_ratio: f64,
    /// Strictly below one half (with margin).
    pub holds: bool,
    /// Within the margin of one half.
    pub indeterminate: bool,
    pub worst_signs: Vec<f64>,
}

/// Exact `max_ratio` by enumerating sign patterns on `S`; each pattern is the
/// LP `max sigma^T x_S` s.t. `A x = 0`, `||x||_1 <= 1`.
pub fn rnsp_check(a: &DMatrix<f64>, support: &[usize]) -> Result<RnspReport> {
    rnsp_check_with(a, support, ExecMode::default())
}

pub fn rnsp_check_with(a: &DMatrix<f64>, support: &[usize], mode: ExecMode) -> Result<RnspReport> {
    let (m, d) = a.shape();
    let mut s = support.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != support.len() || s.iter().any(|&i| i >= d) {
        return Err(Error::InvalidArgument(
            "support must be distinct column indices".into(),
        ));
    }
    if s.len() > RNSP_MAX_SUPPORT {
        return Err(Error::BudgetExceeded(format!(
            "|S| = {} exceeds {RNSP_MAX_SUPPORT}",
            s.len()
        )));
    }
    if s.is_empty() {
        return Ok(RnspReport {
            support: s,
            max_ratio: 0.0,
            holds: true,
            indeterminate: false,
            worst_signs: vec![],
        });
    }
    // sigma and -sigma give the same value, so fix the first sign
    let patterns: Vec<u32> = (0..1u32 << (s.len() - 1)).collect();
    let cols = 2 * d + 1;
    let mut a_eq = DMatrix::zeros(m + 1, cols);
    a_eq.view_mut((0, 0), (m, d)).copy_from(a);
    a_eq.view_mut((0, d), (m, d)).copy_from(&(-a));
    for j in 0..cols {
        a_eq[(m, j)] = 1.0;
    }
    let mut b = DVector::zeros(m + 1);
    b[m] = 1.0;
    let signs_of = |mask: u32| -> Vec<f64> {
        (0..s.len())
            .map(|i| {
                if i > 0 && mask & (1 << (i - 1)) != 0 {
                    -1.0
                } else {
                    1.0
                }
            })
            .collect()
    };
    let values = exec::map(mode, &patterns, |&mask| -> Result<f64> {
        let sig = signs_of(mask);
        let mut cost = DVector::zeros(cols);
        for (k, &i) in s.iter().enumerate() {
            cost[i] = -sig[k];
            cost[d + i] = sig[k];
        }
        let lp = LpProblem::new(
            cost,
            a_eq.clone(),
            b.clone(),
            vec![Bound::NonNegative; cols],
        )?;
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(-sol.objective),
            LpStatus::Infeasible => Err(Error::Infeasible("RNSP LP infeasible".into())),
            LpStatus::Unbounded => Err(Error::Unbounded),
        }
    });
    let mut best = (f64::NEG_INFINITY, 0u32);
    for (v, &mask) in values.into_iter().zip(&patterns) {
        let v = v?;
        if v > best.0 {
            best = (v, mask);
        }
    }
    let max_ratio = best.0.clamp(0.0, 1.0);
    Ok(RnspReport {
        support: s.clone(),
        max_ratio,
        holds: max_ratio < 0.5 - RNSP_MARGIN,
        indeterminate: (max_ratio - 0.5).abs() <= RNSP_MARGIN,
        worst_signs: signs_of(best.1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryAudit {
    pub bp_recovers: bool,
    pub rnsp_holds: bool,
    pub max_ratio: f64,
}

impl RecoveryAudit {
    /// The audited direction: strict RNSP implies recovery.
    pub fn consistent(&self) -> bool {
        !self.rnsp_holds || self.bp_recovers
    }
}

/// Exact BP (simplex) and the RNSP check on `support(x_star)`, independently.
pub fn recovery_iff_rnsp(a: &DMatrix<f64>, x_star: &DVector<f64>) -> Result<RecoveryAudit> {
    if x_star.len() != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "x* has length {}, A has {} columns",
            x_star.len(),
            a.ncols()
        )));
    }
    let y = a * x_star;
    let bp = basis_pursuit_lp(a, &y)?;
    let bp_recovers = (&bp.x - x_star).norm() <= 1e-7 * x_star.norm().max(1.0);
    let support: Vec<usize> = (0..x_star.len()).filter(|&i| x_star[i] != 0.0).collect();
    let rnsp = rnsp_check(a, &support)?;
    Ok(RecoveryAudit {
        bp_recovers,
        rnsp_holds: rnsp.holds,
        max_ratio: rnsp.max_ratio,
    })
}

/// Orthonormal basis of `ker(A)` (columns) from the eigenvectors of `A^T A`
/// with the smallest eigenvalues; the rank comes from the singular values.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, p) = a.shape();
    let sv = a.singular_values();
    let smax = sv.max();
    let tol = (m.max(p) as f64) * f64::EPSILON * smax;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let eig = a.tr_mul(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let k = p - rank;
    let mut basis = DMatrix::zeros(p, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    basis
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub kernel_dim: usize,
    /// Per basis vector, the worst block norm among `A_1 x_1` and
    /// `A~ Delta_e` for edges away from the root.
    pub violations: Vec<f64>,
    pub tolerance: f64,
    pub passes: bool,
}

impl KernelReport {
    pub fn failing_vectors(&self) -> usize {
        self.violations
            .iter()
            .filter(|&&v| v > self.tolerance)
            .count()
    }
}

/// For every kernel vector of the augmented matrix check `A_1 x_1 = 0` and
/// `A~ Delta_e = 0` on every edge not touching the root. `A~` is the shared
/// non-root design, or the child's design when designs differ.
pub fn kernel_condition_check(
    aug: &AugmentedSystem,
    g: &Graph,
    shared_nonroot: bool,
) -> Result<KernelReport> {
    if aug.ncols() > DENSE_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "{} columns exceeds {DENSE_BUDGET}",
            aug.ncols()
        )));
    }
    if g.n() != aug.n() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} nodes, system {}",
            g.n(),
            aug.n()
        )));
    }
    let designs = aug.designs();
    if shared_nonroot
        && designs
            .iter()
            .skip(1)
            .any(|a| a != &designs[1.min(designs.len() - 1)])
    {
        return Err(Error::InvalidArgument(
            "non-root designs are not identical".into(),
        ));
    }
    let a = aug.dense();
    let norm = a.singular_values().max();
    let tolerance = 1e-8 * norm.max(f64::MIN_POSITIVE);
    let basis = null_space(&a);
    let d = aug.d();
    let mut violations = Vec::with_capacity(basis.ncols());
    for z in basis.column_iter() {
        let mut worst = (&designs[0] * z.rows(0, d)).norm();
        for e in 1..g.n() {
            let (v, w) = g.edge(e);
            if v == 1 || w == 1 {
                continue;
            }
            let child = if g.parent(v).map(|(p, _)| p) == Some(w) {
                v
            } else {
                w
            };
            let delta = z.rows(e * d, d);
            worst = worst.max((&designs[child - 1] * delta).norm());
        }
        violations.push(worst);
    }
    let passes = violations.iter().all(|&v| v <= tolerance);
    Ok(KernelReport {
        kernel_dim: basis.ncols(),
        violations,
        tolerance,
        passes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub k: usize,
    pub delta_k: f64,
    pub delta_2k: f64,
    pub samples: usize,
    /// Largest `||x_U||_2 / bound` seen, `U` the top-`k` entries of `x`.
    pub worst_ratio: f64,
    pub holds: bool,
}

/// Checks `||x_U||_2 <= delta_2k / (1 - delta_k) / sqrt(k) * ||x||_1` on random
/// kernel vectors of `b`. Taking `U` as the `k` largest entries covers every
/// `U` of size `k`, since the right side does not depend on `U`.
pub fn lemma1_check(b: &DMatrix<f64>, k: usize, samples: usize, seed: u64) -> Result<Lemma1Report> {
    let d = b.ncols();
    if k == 0 || 2 * k > d {
        return Err(Error::InvalidArgument(format!("need 1 <= k and 2k <= {d}")));
    }
    let delta_k = rip_constant(b, k)?.delta;
    let delta_2k = rip_constant(b, 2 * k)?.delta;
    if delta_k >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "delta_{k} = {delta_k} is not below 1"
        )));
    }
    let basis = null_space(b);
    if basis.ncols() == 0 {
        return Ok(Lemma1Report {
            k,
            delta_k,
            delta_2k,
            samples: 0,
            worst_ratio: 0.0,
            holds: true,
        });
    }
    let factor = delta_2k / (1.0 - delta_k) / (k as f64).sqrt();
    let mut r = rng::stream(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let coef = DVector::from_fn(basis.ncols(), |_, _| r.random_range(-1.0..1.0));
        let x = &basis * coef;
        let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let lhs = mags[..k].iter().map(|v| v * v).sum::<f64>().sqrt();
        let rhs = factor * x.lp_norm(1);
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        } else if lhs > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(Lemma1Report {
        k,
        delta_k,
        delta_2k,
        samples,
        worst_ratio: worst,
        holds: worst <= 1.0 + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub source: &'static str,
    pub quantity: &'static str,
    pub expression: String,
    pub value: f64,
}

/// Order-level sample sizes with every constant set to one and failure
/// probabilities dropped. Not a prediction of actual sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub rows: Vec<ThresholdRow>,
}

impl ThresholdTable {
    pub fn get(&self, source: &str, quantity: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.source == source && r.quantity == quantity)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("# order-only: constants set to 1\nsource,quantity,expression,value\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},\"{}\",{}",
                r.source, r.quantity, r.expression, r.value
            );
        }
        s
    }
}

pub fn theorem_thresholds(g: &Graph, d: usize, s: usize, s_prime: usize) -> ThresholdTable {
    let gm = graph_metrics(g);
    let n = g.n() as f64;
    let diam = gm.diameter as f64;
    let deg1 = gm.degree[0] as f64;
    let deg_nr = gm.max_nonroot_degree as f64;
    let (s, sp) = (s as f64, s_prime as f64);
    let logd = (d as f64).ln();
    let row = |source, quantity, expression: &str, value: f64| ThresholdRow {
        source,
        quantity,
        expression: expression.to_string(),
        value,
    };
    ThresholdTable {
        rows: vec![
            row(
                "theorem1",
                "n_root",
                "max(s, n^2 diam s') log d",
                s.max(n * n * diam * sp) * logd,
            ),
            row(
                "theorem1",
                "n_nonroot",
                "n diam s' log d",
                n * diam * sp * logd,
            ),
            row("theorem2", "n_root", "s log d", s * logd),
            row("theorem2", "n_nonroot", "n^2 s' log d", n * n * sp * logd),
            row(
                "theorem3",
                "n_root",
                "max(s, n^2 s') log d",
                s.max(n * n * sp) * logd,
            ),
            row(
                "theorem3",
                "n_nonroot",
                "max(n, deg_nonroot^2 diam^2) s' log d",
                n.max(deg_nr * deg_nr * diam * diam) * sp * logd,
            ),
            row(
                "theorem4",
                "n_root",
                "max(s, deg_root^2 s') log d",
                s.max(deg1 * deg1 * sp) * logd,
            ),
            row(
                "theorem4",
                "n_nonroot",
                "deg_root^2 s' log d",
                deg1 * deg1 * sp * logd,
            ),
            row(
                "table1",
                "independent_bp",
                "n s + diam^2 s'",
                n * s + diam * diam * sp,
            ),
            row("table1", "stepwise_bp", "s + n s'", s + n * sp),
            row(
                "table1",
                "group_lasso",
                "n s + diam^2 s'",
                n * s + diam * diam * sp,
            ),
            row("table1", "tvbp", "s + n^2 diam s'", s + n * n * diam * sp),
            row(
                "table2",
                "tvbp_known_tree",
                "s + max(n^2, n deg_nonroot^2 diam^2) s'",
                s + (n * n).max(n * deg_nr * deg_nr * diam * diam) * sp,
            ),
            row(
                "table2",
                "tvbp_known_tree_equal",
                "s + n deg_root^2 s'",
                s + n * deg1 * deg1 * sp,
            ),
        ],
    }
}

/// Columns of the augmented matrix that are active for node `v`.
pub fn active_blocks(g: &Graph, v: usize) -> Result<Vec<usize>> {
    let mut blocks = vec![0];
    blocks.extend(path_to_root(g, v)?.edges);
    Ok(blocks)
}
