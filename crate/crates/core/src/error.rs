use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("point ({0}, {1}) lies outside the closed unit square")]
    PointOutside(f64, f64),

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("node ({0}, {1}) is not an interior mesh node")]
    NotInteriorNode(usize, usize),

    #[error("sigma policy rejected: {0:?}")]
    PolicyRejected(Vec<String>),

    #[error("input violates the standing assumption eps <= 1/N (eps = {eps}, N = {n})")]
    AssumptionViolated { eps: f64, n: usize },

    #[error("singular matrix: zero pivot in column {column}")]
    Singular { column: usize },

    #[error(
        "linear solve did not reach residual tolerance: residual {residual:.3e}, pivot ratio estimate {condition_estimate:.3e}"
    )]
    SolveFailed {
        residual: f64,
        condition_estimate: f64,
    },

    #[error("quadrature did not converge: relative change {achieved:.3e} at depth {depth}")]
    QuadratureNotConverged { achieved: f64, depth: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
