//! Joint recovery of sparse signals related through a tree.
//!
//! Every node `v` of a rooted tree holds a design `A_v` and responses
//! `y_v = A_v x_v (+ noise)`. The root signal is `s`-sparse and the signals
//! differ by at most `s'` coordinates across each edge. Total variation basis
//! pursuit recovers all of them together by minimising
//! `||x_1||_1 + sum_{(v,w)} ||x_v - x_w||_1` under the measurement constraints,
//! or under a joint residual budget in the noisy variant.
//!
//! Module map:
//! - [`graph`]: tree constructors, root paths and metrics.
//! - [`problem`]: seeded signal, design and measurement generators.
//! - [`reformulation`]: the stacked single-matrix form of the joint problem.
//! - [`optim`]: LP, basis pursuit, BPDN and the distributed subproblem kernels.
//! - [`solvers`]: centralized joint solvers and the baselines.
//! - [`distributed`]: message-passing ADMM simulation over the tree.
//! - [`verification`]: brute-force RIP / null space oracles.
//! - [`harness`]: experiment runners, CSV output and config files.

pub mod container;
pub mod distributed;
pub mod error;
pub mod exec;
pub mod graph;
pub mod harness;
pub mod optim;
pub mod problem;
pub mod reformulation;
pub mod rng;
pub mod solvers;
pub mod verification;

pub use error::{Error, Result};
pub use exec::ExecMode;
