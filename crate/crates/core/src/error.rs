use thiserror::Error;

/// Errors raised by graph construction, spectral computations and the
/// statistical layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a vertex outside 0..{2}")]
    VertexOutOfRange(usize, usize, usize),
    #[error("edge ({0}, {1}) is not in the parent graph")]
    EdgeNotInGraph(usize, usize),
    #[error("graph must have at least one vertex")]
    EmptyVertexSet,
    #[error("graph is not weakly connected")]
    Disconnected,
    #[error("weight on edge ({0}, {1}) must be strictly positive, got {2}")]
    NonPositiveWeight(usize, usize, f64),
    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("Laplacian has eigenvalue {0} below the roundoff threshold")]
    NegativeEigenvalue(f64),
    #[error("symmetric eigensolver did not converge for eigenvalue {0}")]
    NoConvergence(usize),
    #[error("kernel dimension is {0}; the smallest nonzero eigenvalue requires exactly one")]
    DegenerateKernel(usize),
    #[error("diffusion time must be {expected}, got {actual}")]
    InvalidTime { expected: &'static str, actual: f64 },
    #[error("largest eigenvalue is zero (edgeless graph); no default diffusion time")]
    ZeroSpectrum,
    #[error("layer count must be at least 1")]
    ZeroLayers,
    #[error("delta must be strictly positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("variance decreases along the chain at position {0}")]
    DecreasingVariance(usize),
    #[error("signal entry {index} is {value}; the log-normal model needs strictly positive values")]
    NonPositiveSignal { index: usize, value: f64 },
    #[error("cell (weekday {weekday}, block {block}) has only {available} observed weeks, need {required}")]
    InsufficientData {
        weekday: usize,
        block: usize,
        available: usize,
        required: usize,
    },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
