use crate::fem::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("energy density is not convex: {0}")]
    NonConvex(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular problem: {0}")]
    Singular(String),

    #[error("no convergence after {} iterations (gradient norm {:.3e})", .0.iterations, .0.grad_norm)]
    Convergence(Box<ConvergenceFailure>),

    #[error("inconsistent sequence: {0}")]
    Inconsistent(String),

    #[error("indeterminate regime: {0}")]
    IndeterminateRegime(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the minimizer knew when it gave up.
#[derive(Debug, Clone)]
pub struct ConvergenceFailure {
    pub iterations: usize,
    pub grad_norm: f64,
    pub history: Vec<IterationRecord>,
    pub last_iterate: Vec<f64>,
}
