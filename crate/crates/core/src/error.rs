use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix dimensions do not match: {0}")]
    Shape(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("expected a one-dimensional kernel, found {0} zero eigenvalues")]
    KernelDimension(usize),

    #[error("invalid sample: {0}")]
    Sample(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss is not smooth; {0}")]
    NonSmooth(String),

    #[error("loss is smooth; {0}")]
    Smooth(String),

    #[error("step-size schedule violated at coordinate group {group}: {detail}")]
    Schedule { group: usize, detail: String },

    #[error("non-finite iterate at iteration {0}")]
    Diverged(usize),

    #[error("dense oracle too large: {rows} rows exceeds the limit of {limit}")]
    TooLarge { rows: usize, limit: usize },

    #[error("vector is not in the range of the operator (residual {0:e})")]
    OutOfRange(f64),

    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
