use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector is zero or has non-finite entries")]
    DegenerateVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("exterior power degree {k} out of range 1..={dim}")]
    WedgeDegree { k: usize, dim: usize },

    #[error("matrix is numerically singular")]
    Singular,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("finite-support ensemble required for {0}")]
    NeedsFiniteSupport(&'static str),

    #[error("matrix does not preserve the invariant subspace: lower-left block norm {residual:e} exceeds {bound:e}")]
    InvarianceViolation { residual: f64, bound: f64 },

    #[error("point is on or too close to P(W): quotient component norm {0:e}")]
    InsideInvariant(f64),

    #[error("orbit span did not stabilize within {0} iterations")]
    NoStabilization(usize),

    #[error("filtration diagnostic failure: {0}")]
    FiltrationDiagnostic(String),

    #[error("filtration index {index} exceeds detected length {len}")]
    FiltrationIndex { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Whether the error comes from reading or parsing user input rather
    /// than from the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::Io(_))
    }
}
