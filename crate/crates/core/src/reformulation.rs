//! The augmented basis-pursuit system over stacked unknowns
//! `z = (x_1, delta_1, ..., delta_{n-1})`.
//!
//! Row block `v` is `[A_v | H_{v,1} ... H_{v,n-1}]` with `H_{v,e} = A_v` when
//! edge `e` lies on the root path of `v` and zero otherwise, so that row block
//! `v` applied to `z` equals `A_v x_v`. Edge `e` owns column block `e`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::graph::{all_root_paths, Graph};
use crate::problem::{DesignSet, MeasurementSet, SignalEnsemble};

#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    graph: Graph,
    designs: Vec<DMatrix<f64>>,
    /// Stacked responses, row block `v` at `row_offsets[v - 1]`.
    pub y: DVector<f64>,
    row_offsets: Vec<usize>,
    d: usize,
    /// `on_path[v - 1][e - 1]`: edge `e` lies on the root path of `v`.
    on_path: Vec<Vec<bool>>,
    mode: ExecMode,
}

/// Stacked support: root coordinates plus each edge support offset by its block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedSupport {
    pub indices: Vec<usize>,
}

impl AugmentedSystem {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn designs(&self) -> &[DMatrix<f64>] {
        &self.designs
    }

    pub fn nrows(&self) -> usize {
        self.y.len()
    }

    pub fn ncols(&self) -> usize {
        self.n() * self.d
    }

    pub fn row_range(&self, v: usize) -> std::ops::Range<usize> {
        let start = self.row_offsets[v - 1];
        start..start + self.designs[v - 1].nrows()
    }

    pub fn with_exec(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    /// Whether block `(v, i)` is nonzero; block 0 is the root block, block `i >= 1`
    /// belongs to edge `i`.
    pub fn block_nonzero(&self, v: usize, block: usize) -> bool {
        block == 0 || self.on_path[v - 1][block - 1]
    }

    /// Edge id to column-block index. Fixed by edge id order.
    pub fn edge_index(&self, edge: usize) -> usize {
        edge
    }

    /// Multiply every row block and design by `factor` (used to normalise the data).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.y *= factor;
        for a in &mut out.designs {
            *a *= factor;
        }
        out
    }

    /// Materialise the dense `(sum N_v) x (n d)` matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut a = DMatrix::zeros(self.nrows(), self.ncols());
        for v in 1..=self.n() {
            let rows = self.row_range(v);
            let av = &self.designs[v - 1];
            for block in 0..self.n() {
                if self.block_nonzero(v, block) {
                    a.view_mut((rows.start, block * d), (rows.len(), d))
                        .copy_from(av);
                }
            }
        }
        a
    }

    /// `A z` computed block-wise without materialisation.
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        let xs = expand_solution(&self.graph, z).expect("stacked length matches");
        let parts = exec::map_range(self.mode, self.n(), |i| &self.designs[i] * &xs[i]);
        let mut out = DVector::zeros(self.nrows());
        for (v, p) in parts.iter().enumerate() {
            out.rows_mut(self.row_offsets[v], p.len()).copy_from(p);
        }
        out
    }

    /// `A^T r` computed block-wise: per-node back-projections summed over
    /// the subtree below each edge.
    pub fn apply_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        let mut per_node = exec::map_range(self.mode, self.n(), |i| {
            let rows = self.row_range(i + 1);
            self.designs[i].tr_mul(&r.rows(rows.start, rows.len()))
        });
        // Leaves first: fold each node's accumulated subtree sum into its parent.
        let order = self.graph.bfs_order();
        let mut out = DVector::zeros(self.ncols());
        for &v in order.iter().rev() {
            if let Some((p, e)) = self.graph.parent(v) {
                out.rows_mut(e * d, d).copy_from(&per_node[v - 1]);
                let child = std::mem::replace(&mut per_node[v - 1], DVector::zeros(0));
                per_node[p - 1] += child;
            }
        }
        out.rows_mut(0, d).copy_from(&per_node[0]);
        out
    }

    /// `A A^T`, using `(A A^T)_{vw} = (1 + |path(v) & path(w)|) A_v A_w^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n();
        let m = self.nrows();
        let identical = self.designs.iter().all(|a| a == &self.designs[0]);
        let shared = identical.then(|| &self.designs[0] * self.designs[0].transpose());
        let pairs: Vec<(usize, usize)> =
            (1..=n).flat_map(|v| (v..=n).map(move |w| (v, w))).collect();
        let blocks = exec::map(self.mode, &pairs, |&(v, w)| {
            let common = self.on_path[v - 1]
                .iter()
                .zip(&self.on_path[w - 1])
                .filter(|(a, b)| **a && **b)
                .count();
            let weight = 1.0 + common as f64;
            match &shared {
                Some(g) => g * weight,
                None => (&self.designs[v - 1] * self.designs[w - 1].transpose()) * weight,
            }
        });
        let mut g = DMatrix::zeros(m, m);
        for (&(v, w), b) in pairs.iter().zip(blocks) {
            let (rv, rw) = (self.row_range(v), self.row_range(w));
            g.view_mut((rv.start, rw.start), (rv.len(), rw.len()))
                .copy_from(&b);
            if v != w {
                g.view_mut((rw.start, rv.start), (rw.len(), rv.len()))
                    .copy_from(&b.transpose());
            }
        }
        g
    }

    /// Path-overlap matrix `K_{vw} = 1 + |path(v) & path(w)|`.
    pub fn path_kernel(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            1.0 + self.on_path[i]
                .iter()
                .zip(&self.on_path[j])
                .filter(|(a, b)| **a && **b)
                .count() as f64
        })
    }

    /// Split a stacked response-space vector into per-node pieces.
    pub fn split_rows(&self, r: &DVector<f64>) -> Vec<DVector<f64>> {
        (1..=self.n())
            .map(|v| {
                let rows = self.row_range(v);
                r.rows(rows.start, rows.len()).into_owned()
            })
            .collect()
    }
}

pub fn build_augmented(
    g: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
) -> Result<AugmentedSystem> {
    build_from_parts(g, designs.matrices.clone(), &meas.responses)
}

pub(crate) fn build_from_parts(
    g: &Graph,
    designs: Vec<DMatrix<f64>>,
    responses: &[DVector<f64>],
) -> Result<AugmentedSystem> {
    let n = g.n();
    if designs.len() != n || responses.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "graph has {n} nodes, got {} designs and {} responses",
            designs.len(),
            responses.len()
        )));
    }
    let d = designs[0].ncols();
    let mut row_offsets = Vec::with_capacity(n);
    let mut total = 0;
    for (v, (a, y)) in designs.iter().zip(responses).enumerate() {
        if a.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "node {} has {} columns",
                v + 1,
                a.ncols()
            )));
        }
        if a.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "node {}: {} rows but {} responses",
                v + 1,
                a.nrows(),
                y.len()
            )));
        }
        row_offsets.push(total);
        total += a.nrows();
    }
    let mut y = DVector::zeros(total);
    for (off, r) in row_offsets.iter().zip(responses) {
        y.rows_mut(*off, r.len()).copy_from(r);
    }
    let on_path = all_root_paths(g)
        .into_iter()
        .map(|p| {
            let mut row = vec![false; g.num_edges()];
            for e in p.edges {
                row[e - 1] = true;
            }
            row
        })
        .collect();
    Ok(AugmentedSystem {
        graph: g.clone(),
        designs,
        y,
        row_offsets,
        d,
        on_path,
        mode: ExecMode::default(),
    })
}

pub fn augmented_support(ens: &SignalEnsemble) -> AugmentedSupport {
    let d = ens.d;
    let mut indices = ens.root_support.clone();
    for (e, supp) in ens.edge_supports.iter().enumerate() {
        indices.extend(supp.iter().map(|i| i + (e + 1) * d));
    }
    indices.sort_unstable();
    indices.dedup();
    AugmentedSupport { indices }
}

/// Per-node signals `x_v = z_0 + sum_{e in path(v)} z_e`.
pub fn expand_solution(g: &Graph, stacked: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let n = g.n();
    if stacked.len() % n != 0 {
        return Err(Error::ShapeMismatch(format!(
            "stacked length {} is not a multiple of n = {n}",
            stacked.len()
        )));
    }
    let d = stacked.len() / n;
    let mut xs = vec![DVector::zeros(0); n];
    for v in g.bfs_order() {
        xs[v - 1] = match g.parent(v) {
            None => stacked.rows(0, d).into_owned(),
            Some((p, e)) => &xs[p - 1] + stacked.rows(e * d, d),
        };
    }
    Ok(xs)
}

/// Inverse of [`expand_solution`]: root signal then child-minus-parent per edge.
pub fn stack_solution(g: &Graph, xs: &[DVector<f64>]) -> DVector<f64> {
    let d = xs[0].len();
    let mut z = DVector::zeros(g.n() * d);
    z.rows_mut(0, d).copy_from(&xs[0]);
    for v in 2..=g.n() {
        let (p, e) = g.parent(v).expect("non-root has a parent");
        z.rows_mut(e * d, d).copy_from(&(&xs[v - 1] - &xs[p - 1]));
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_balanced_tree, make_path, make_star, path_to_root};
    use crate::problem::{gen_designs, gen_signals, measure, DesignSharing, SignalScheme};
    use proptest::prelude::*;

    fn instance(
        g: &Graph,
        d: usize,
        rows: usize,
        seed: u64,
    ) -> (SignalEnsemble, DesignSet, MeasurementSet) {
        let ens = gen_signals(g, d, 2, 1, SignalScheme::DisjointPm1, seed).unwrap();
        let designs = gen_designs(&vec![rows; g.n()], d, DesignSharing::Independent, seed).unwrap();
        let meas = measure(&designs, &ens, 0.0, seed).unwrap();
        (ens, designs, meas)
    }

    #[test]
    fn single_node_is_plain_basis_pursuit() {
        let g = make_path(1).unwrap();
        let (_, designs, meas) = instance(&g, 6, 3, 1);
        let aug = build_augmented(&g, &designs, &meas).unwrap();
        assert_eq!(aug.dense(), designs.matrices[0]);
        assert_eq!(aug.y, meas.responses[0]);
    }

    #[test]
    fn block_patterns() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(&g, 8, 3, 2);
        let aug = build_augmented(&g, &designs, &meas).unwrap();
        let a = aug.dense();
        let r = aug.row_range(3);
        for block in 0..3 {
            assert_eq!(a.view((r.start, block * 8), (3, 8)), designs.matrices[2]);
        }
        // root row block: difference blocks are zero
        let r1 = aug.row_range(1);
        assert!(a.view((r1.start, 8), (3, 16)).iter().all(|v| *v == 0.0));

        let g = make_star(4).unwrap();
        let (_, designs, meas) = instance(&g, 8, 3, 3);
        let aug = build_augmented(&g, &designs, &meas).unwrap();
        for v in 2..=4 {
            assert_eq!((1..4).filter(|&b| aug.block_nonzero(v, b)).count(), 1);
        }
    }

    #[test]
    fn true_stacking_reproduces_responses() {
        let g = make_balanced_tree(2, 2).unwrap();
        let (ens, designs, meas) = instance(&g, 12, 4, 5);
        let aug = build_augmented(&g, &designs, &meas).unwrap();
        let z = ens.stacked();
        assert!((aug.dense() * &z - &aug.y).norm() < 1e-12);
        assert!((aug.apply(&z) - &aug.y).norm() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let g = make_path(3).unwrap();
        let (_, designs, meas) = instance(&g, 8, 3, 2);
        let g2 = make_path(2).unwrap();
        assert!(build_augmented(&g2, &designs, &meas).is_err());
        assert!(expand_solution(&g, &DVector::zeros(7)).is_err());
    }

    #[test]
    fn support_examples() {
        let g = make_path(4).unwrap();
        let ens = gen_signals(&g, 128, 12, 0, SignalScheme::DisjointPm1, 1).unwrap();
        assert_eq!(augmented_support(&ens).indices, ens.root_support);
        let ens = gen_signals(&g, 128, 12, 4, SignalScheme::DisjointPm1, 1).unwrap();
        assert_eq!(augmented_support(&ens).indices.len(), 24);
        // direct nonzero scan oracle
        let ens = gen_signals(
            &make_balanced_tree(2, 2).unwrap(),
            16,
            2,
            1,
            SignalScheme::GaussianDiffs,
            4,
        )
        .unwrap();
        let z = ens.stacked();
        let scan: Vec<usize> = (0..z.len()).filter(|&i| z[i] != 0.0).collect();
        assert_eq!(augmented_support(&ens).indices, scan);
    }

    #[test]
    fn expand_examples() {
        let g = make_path(3).unwrap();
        let zero = expand_solution(&g, &DVector::zeros(12)).unwrap();
        assert!(zero.iter().all(|x| x.iter().all(|v| *v == 0.0)));
        let z = DVector::from_fn(12, |i, _| (i as f64 * 0.37).sin());
        let xs = expand_solution(&g, &z).unwrap();
        for j in 0..4 {
            let want = z[j] + z[4 + j] + z[8 + j];
            assert!((xs[2][j] - want).abs() < 1e-15);
        }
        let g = make_balanced_tree(2, 2).unwrap();
        let ens = gen_signals(&g, 10, 2, 1, SignalScheme::DisjointPm1, 8).unwrap();
        assert_eq!(
            expand_solution(&g, &ens.stacked()).unwrap(),
            ens.node_signals()
        );
    }

    fn arb_case() -> impl Strategy<Value = (Graph, u64)> {
        (1usize..7, any::<u64>(), 0usize..3).prop_map(|(n, seed, kind)| {
            let g = match kind {
                0 => make_path(n).unwrap(),
                1 => make_star(n).unwrap(),
                _ => make_balanced_tree(2, n.min(3) - 1).unwrap(),
            };
            (g, seed)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn operator_matches_dense((g, seed) in arb_case()) {
            let (_, designs, meas) = instance(&g, g.n() + 2, 3, seed);
            let aug = build_augmented(&g, &designs, &meas).unwrap();
            let a = aug.dense();
            let z = DVector::from_fn(aug.ncols(), |i, _| ((i as f64 + seed as f64 % 13.0) * 0.61).cos());
            let r = DVector::from_fn(aug.nrows(), |i, _| ((i as f64) * 1.3).sin());
            prop_assert!((aug.apply(&z) - &a * &z).norm() < 1e-10);
            prop_assert!((aug.apply_transpose(&r) - a.tr_mul(&r)).norm() < 1e-10);
            prop_assert!((aug.gram() - &a * a.transpose()).norm() < 1e-10);
            // Block (v, i) nonzero iff edge i is on the root path of v.
            for v in 1..=g.n() {
                let p = path_to_root(&g, v).unwrap();
                for e in 1..g.n() {
                    prop_assert_eq!(aug.block_nonzero(v, e), p.edges.contains(&e));
                }
            }
            let xs = expand_solution(&g, &z).unwrap();
            prop_assert!((stack_solution(&g, &xs) - &z).norm() < 1e-12);
        }
    }
}
