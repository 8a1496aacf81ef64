//! Optimization kernels shared by the solvers.

pub mod bp;
pub mod linalg;
pub mod lp;
pub mod prox;
pub mod root;

pub use bp::{
    basis_pursuit, basis_pursuit_lp, basis_pursuit_with, bpdn, AdmmConfig, BpBackend,
    SparseSolution,
};
pub use linalg::{least_norm_affine, pinv, LinearOperator};
pub use lp::{solve_lp, Bound, LpProblem, LpSolution, LpStatus};
pub use prox::{group_soft_threshold, shrink_delta, soft_threshold};
pub use root::{root_subproblem, BbConfig, RootSolution};
