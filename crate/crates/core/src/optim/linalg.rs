//! Linear operators, pseudoinverse and the least-norm affine step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::reformulation::AugmentedSystem;

/// Solves `(shift I + A A^T) u = r` for a fixed operator `A`.
pub trait GramSolve: Send + Sync {
    fn solve(&self, r: &DVector<f64>) -> DVector<f64>;
}

/// A matrix or a matrix-free operator with exact products.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, r: &DVector<f64>) -> DVector<f64>;
    fn to_dense(&self) -> DMatrix<f64>;

    fn gram(&self) -> DMatrix<f64> {
        let a = self.to_dense();
        &a * a.transpose()
    }

    fn shifted_gram_solver(&self, shift: f64) -> Result<Box<dyn GramSolve>> {
        DenseGramSolver::new(self.gram(), shift).map(|s| Box::new(s) as Box<dyn GramSolve>)
    }

    /// Columns `cols` as a dense `nrows x cols.len()` matrix.
    fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), cols.len());
        for (k, &j) in cols.iter().enumerate() {
            let mut e = DVector::zeros(self.ncols());
            e[j] = 1.0;
            out.set_column(k, &self.apply(&e));
        }
        out
    }
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
    fn apply_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        self.tr_mul(r)
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
    fn gram(&self) -> DMatrix<f64> {
        self * self.transpose()
    }
    fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        self.select_columns(cols)
    }
}

impl LinearOperator for AugmentedSystem {
    fn nrows(&self) -> usize {
        AugmentedSystem::nrows(self)
    }
    fn ncols(&self) -> usize {
        AugmentedSystem::ncols(self)
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        AugmentedSystem::apply(self, x)
    }
    fn apply_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        AugmentedSystem::apply_transpose(self, r)
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.dense()
    }
    fn gram(&self) -> DMatrix<f64> {
        AugmentedSystem::gram(self)
    }
    fn shifted_gram_solver(&self, shift: f64) -> Result<Box<dyn GramSolve>> {
        let designs = self.designs();
        let uniform = designs.iter().all(|a| a == &designs[0]);
        if uniform && self.n() > 1 {
            let g = &designs[0] * designs[0].transpose();
            return Ok(Box::new(KroneckerGramSolver::new(
                &self.path_kernel(),
                &g,
                shift,
            )?));
        }
        DenseGramSolver::new(self.gram(), shift).map(|s| Box::new(s) as Box<dyn GramSolve>)
    }
    fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        // Column j of block b is column (j mod d) of A_v on every row block v
        // where block b is active.
        let d = self.d();
        let mut out = DMatrix::zeros(self.nrows(), cols.len());
        for (k, &j) in cols.iter().enumerate() {
            let (block, col) = (j / d, j % d);
            for v in 1..=self.n() {
                if self.block_nonzero(v, block) {
                    let rows = self.row_range(v);
                    out.view_mut((rows.start, k), (rows.len(), 1))
                        .copy_from(&self.designs()[v - 1].column(col));
                }
            }
        }
        out
    }
}

pub struct DenseGramSolver {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl DenseGramSolver {
    pub fn new(mut gram: DMatrix<f64>, shift: f64) -> Result<Self> {
        for i in 0..gram.nrows() {
            gram[(i, i)] += shift;
        }
        let chol = gram.cholesky().ok_or_else(|| {
            Error::InvalidArgument("shifted Gram matrix is not positive definite".into())
        })?;
        Ok(DenseGramSolver { chol })
    }
}

impl GramSolve for DenseGramSolver {
    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }
}

/// `(shift I + K (x) G)^{-1}` through the eigendecompositions of `K` (n x n)
/// and `G` (N x N). Row block `v` of the operand is the `v`-th column of an
/// `N x n` matrix.
pub struct KroneckerGramSolver {
    k_vecs: DMatrix<f64>,
    g_vecs: DMatrix<f64>,
    inv_diag: DMatrix<f64>,
}

impl KroneckerGramSolver {
    pub fn new(k: &DMatrix<f64>, g: &DMatrix<f64>, shift: f64) -> Result<Self> {
        let ke = k.clone().symmetric_eigen();
        let ge = g.clone().symmetric_eigen();
        let inv_diag = DMatrix::from_fn(g.nrows(), k.nrows(), |i, j| {
            1.0 / (shift + ge.eigenvalues[i] * ke.eigenvalues[j])
        });
        if inv_diag.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidArgument(
                "shifted Kronecker Gram matrix is singular".into(),
            ));
        }
        Ok(KroneckerGramSolver {
            k_vecs: ke.eigenvectors,
            g_vecs: ge.eigenvectors,
            inv_diag,
        })
    }
}

impl GramSolve for KroneckerGramSolver {
    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let (nr, nn) = (self.g_vecs.nrows(), self.k_vecs.nrows());
        let rm = DMatrix::from_column_slice(nr, nn, r.as_slice());
        let t = self.g_vecs.tr_mul(&rm) * &self.k_vecs;
        let t = t.component_mul(&self.inv_diag);
        let out = &self.g_vecs * t * self.k_vecs.transpose();
        DVector::from_column_slice(out.as_slice())
    }
}

/// Moore-Penrose pseudoinverse via SVD, cutting singular values below
/// `max(rows, cols) * eps * sigma_max`.
pub fn pinv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(n, m));
    }
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::SvdFailure)?;
    let smax = svd.singular_values.max();
    let cutoff = m.max(n) as f64 * f64::EPSILON * smax;
    let u = svd.u.as_ref().ok_or(Error::SvdFailure)?;
    let vt = svd.v_t.as_ref().ok_or(Error::SvdFailure)?;
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    Ok(out)
}

/// `argmin ||x||^2 + <a, x>` subject to `A x = b`, given `A^+`:
/// `x = A^+ (b + A a / 2) - a / 2`.
pub fn least_norm_affine_with(
    a: &DMatrix<f64>,
    a_pinv: &DMatrix<f64>,
    b: &DVector<f64>,
    lin: &DVector<f64>,
) -> Result<DVector<f64>> {
    if a.nrows() != b.len() || a.ncols() != lin.len() {
        return Err(Error::ShapeMismatch(format!(
            "A is {}x{}, b {}, a {}",
            a.nrows(),
            a.ncols(),
            b.len(),
            lin.len()
        )));
    }
    let half = lin * 0.5;
    let x = a_pinv * (b + a * &half) - half;
    let resid = (a * &x - b).norm();
    if resid > 1e-9 * (1.0 + b.norm()) {
        return Err(Error::Infeasible(format!(
            "A x = b inconsistent (residual {resid:.3e})"
        )));
    }
    Ok(x)
}

pub fn least_norm_affine(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lin: &DVector<f64>,
) -> Result<DVector<f64>> {
    least_norm_affine_with(a, &pinv(a)?, b, lin)
}

/// Largest singular value squared of an operator by power iteration on `A^T A`.
pub fn spectral_norm_sq<O: LinearOperator + ?Sized>(a: &O, iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = a.apply_transpose(&a.apply(&v));
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        est = nw;
        v = w / nw;
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::gen_design;

    fn penrose_residuals(a: &DMatrix<f64>, p: &DMatrix<f64>) -> [f64; 4] {
        let rel = |x: DMatrix<f64>, y: &DMatrix<f64>| (x - y).norm() / (1.0 + y.norm());
        [
            rel(a * p * a, a),
            rel(p * a * p, p),
            rel((a * p).transpose(), &(a * p)),
            rel((p * a).transpose(), &(p * a)),
        ]
    }

    #[test]
    fn pinv_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((pinv(&i).unwrap() - &i).norm() < 1e-14);
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let want = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
        assert!((pinv(&d).unwrap() - want).norm() < 1e-14);
        let a = gen_design(4, 7, 9);
        let p = pinv(&a).unwrap();
        assert!(penrose_residuals(&a, &p).iter().all(|r| *r < 1e-8));
        let rank_def = DMatrix::from_fn(5, 4, |i, j| (i + 1) as f64 * (j + 2) as f64);
        let p = pinv(&rank_def).unwrap();
        assert!(penrose_residuals(&rank_def, &p).iter().all(|r| *r < 1e-8));
    }

    #[test]
    fn least_norm_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert!((least_norm_affine(&i, &b, &DVector::zeros(3)).unwrap() - &b).norm() < 1e-14);
        let a = gen_design(3, 5, 2);
        let x = least_norm_affine(&a, &b, &DVector::zeros(5)).unwrap();
        assert!((x - pinv(&a).unwrap() * &b).norm() < 1e-12);
    }

    #[test]
    fn least_norm_matches_kkt_solve() {
        // KKT oracle: [2I A^T; A 0] [x; mu] = [-a; b]
        let a = gen_design(3, 5, 2);
        let lin = DVector::from_fn(5, |i, _| (i as f64 * 1.7).sin());
        let b = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let mut k = DMatrix::zeros(8, 8);
        k.view_mut((0, 0), (5, 5)).fill_with_identity();
        k.view_mut((0, 0), (5, 5)).scale_mut(2.0);
        k.view_mut((0, 5), (5, 3)).copy_from(&a.transpose());
        k.view_mut((5, 0), (3, 5)).copy_from(&a);
        let mut rhs = DVector::zeros(8);
        rhs.rows_mut(0, 5).copy_from(&(-&lin));
        rhs.rows_mut(5, 3).copy_from(&b);
        let sol = k.lu().solve(&rhs).unwrap();
        let x = least_norm_affine(&a, &b, &lin).unwrap();
        assert!((x - sol.rows(0, 5)).amax() < 1e-8);
    }

    #[test]
    fn least_norm_rejects_inconsistent() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            least_norm_affine(&a, &b, &DVector::zeros(2)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn kronecker_solver_matches_dense() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 3.0]);
        let a = gen_design(4, 6, 1);
        let g = &a * a.transpose();
        let mut full = DMatrix::zeros(12, 12);
        for v in 0..3 {
            for w in 0..3 {
                full.view_mut((4 * v, 4 * w), (4, 4))
                    .copy_from(&(&g * k[(v, w)]));
            }
        }
        let r = DVector::from_fn(12, |i, _| (i as f64).cos());
        let kron = KroneckerGramSolver::new(&k, &g, 0.7).unwrap().solve(&r);
        let dense = DenseGramSolver::new(full, 0.7).unwrap().solve(&r);
        assert!((kron - dense).amax() < 1e-10);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = gen_design(6, 9, 4);
        let s = a.clone().singular_values().max();
        assert!((spectral_norm_sq(&a, 200) - s * s).abs() < 1e-6);
    }
}
