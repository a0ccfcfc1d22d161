use thiserror::Error;

pub type Result<T> = std::result::Result<T, BemError>;

#[derive(Debug, Error)]
pub enum BemError {
    #[error("mesh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh contains no triangles")]
    EmptyMesh,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("degenerate geometry at element {element}: {message}")]
    Geometry { element: usize, message: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel singularity: |x - y| = {distance:e}")]
    Singularity { distance: f64 },

    #[error("batch contract violation: pair ({test}, {trial}) is not disjoint")]
    NonDisjointPair { test: usize, trial: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("block ({row_start}..{row_end}, {col_start}..{col_end}): {source}")]
    Block {
        row_start: usize,
        row_end: usize,
        col_start: usize,
        col_end: usize,
        #[source]
        source: Box<BemError>,
    },

    #[error("division by zero at sample {index}")]
    DivisionByZero { index: usize },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
}
