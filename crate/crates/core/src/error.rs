use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid node {node} (graph has {n} nodes)")]
    InvalidNode { node: usize, n: usize },
    #[error("graph is not a tree: {0}")]
    NotATree(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension exhausted: need {needed} distinct coordinates but d = {d}")]
    DimensionExhausted { needed: usize, d: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unbounded problem")]
    Unbounded,
    #[error("simplex cycling guard tripped after {0} pivots")]
    CyclingGuard(usize),
    #[error(
        "no convergence after {iterations} iterations (primal residual {primal:.3e}, dual residual {dual:.3e})"
    )]
    NotConverged {
        iterations: usize,
        primal: f64,
        dual: f64,
    },
    #[error("singular value decomposition failed")]
    SvdFailure,
    #[error("combinatorial budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("locality violation: node {reader} read state of non-neighbor {owner}")]
    LocalityViolation { reader: usize, owner: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
