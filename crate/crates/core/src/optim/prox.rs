//! Proximal maps: scalar soft-thresholding, the edge-difference shrinkage and
//! the column-group threshold.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| soft(x, t))
}

/// `argmin ||delta||_1 + (rho/2) ||delta||^2 - <delta, gamma + rho (zi - zj)>`.
///
/// With `t = gamma + rho (zi - zj)` the minimiser is `0` where `|t| <= 1` and
/// `(t -+ 1) / rho` otherwise.
pub fn shrink_delta(
    gamma: &DVector<f64>,
    rho: f64,
    zi: &DVector<f64>,
    zj: &DVector<f64>,
) -> DVector<f64> {
    assert!(rho > 0.0, "rho must be positive");
    DVector::from_fn(gamma.len(), |k, _| {
        let t = gamma[k] + rho * (zi[k] - zj[k]);
        soft(t, 1.0) / rho
    })
}

/// Column-wise group threshold of an `n x d` matrix: column `j` is scaled by
/// `max(0, 1 - t / ||col_j||)`.
pub fn group_soft_threshold(rows: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    assert!(t >= 0.0, "threshold must be non-negative");
    let mut out = rows.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm <= t {
            col.fill(0.0);
        } else {
            col *= 1.0 - t / norm;
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::oracle::monotone_zero;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn shrink_examples() {
        let z = DVector::zeros(3);
        let g = DVector::from_element(3, 0.5);
        assert_eq!(shrink_delta(&g, 1.0, &z, &z), DVector::zeros(3));
        let g = DVector::from_element(1, 3.0);
        let z1 = DVector::zeros(1);
        assert_eq!(shrink_delta(&g, 2.0, &z1, &z1)[0], 1.0);
    }

    #[test]
    fn shrink_matches_scalar_oracle() {
        let mut r = crate::rng::stream(42);
        for _ in 0..1000 {
            let rho: f64 = r.random_range(0.05..20.0);
            let gamma = DVector::from_element(1, r.random_range(-5.0..5.0));
            let zi = DVector::from_element(1, r.random_range(-2.0..2.0));
            let zj = DVector::from_element(1, r.random_range(-2.0..2.0));
            let t = gamma[0] + rho * (zi[0] - zj[0]);
            let right_deriv = |x: f64| if x >= 0.0 { 1.0 } else { -1.0 } + rho * x - t;
            let bound = (t.abs() + 1.0) / rho;
            let want = monotone_zero(right_deriv, -bound, bound);
            let got = shrink_delta(&gamma, rho, &zi, &zj)[0];
            assert!(
                (got - want).abs() < 1e-10,
                "t={t} rho={rho} got={got} want={want}"
            );
        }
    }

    #[test]
    fn group_threshold_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 3.0, 0.4, 4.0]);
        assert_eq!(group_soft_threshold(&m, 0.0), m);
        let out = group_soft_threshold(&m, 1.0);
        assert_eq!(out.column(0).norm(), 0.0);
        assert!((out.column(1).norm() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn group_threshold_matches_prox_definition() {
        let mut r = crate::rng::stream(7);
        let m = DMatrix::from_fn(4, 12, |_, _| r.random_range(-1.0..1.0));
        let t = 0.8;
        let out = group_soft_threshold(&m, t);
        for j in 0..12 {
            let c = m.column(j).into_owned();
            let cn = c.norm();
            // prox lies on the ray through c; minimise over its length
            let alpha = monotone_zero(|a| a - cn + t, 0.0, cn + 1.0);
            let want = if cn > 0.0 {
                &c * (alpha / cn)
            } else {
                c.clone()
            };
            assert!((out.column(j) - want).amax() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn shrink_lipschitz_and_sign(t1 in -10.0f64..10.0, t2 in -10.0f64..10.0, rho in 0.01f64..50.0) {
            let z = DVector::zeros(1);
            let a = shrink_delta(&DVector::from_element(1, t1), rho, &z, &z)[0];
            let b = shrink_delta(&DVector::from_element(1, t2), rho, &z, &z)[0];
            prop_assert!((a - b).abs() <= (t1 - t2).abs() / rho + 1e-12);
            if a != 0.0 { prop_assert_eq!(a.signum(), t1.signum()); }
        }
    }
}
