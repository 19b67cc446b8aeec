use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeomxError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomxError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Cholesky factorisation broke down at the given (0-based) leading minor.
    #[error("matrix is not positive definite (leading minor {minor})")]
    NotPositiveDefinite { minor: usize },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("numerical error: {0}")]
    NumericalError(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("optimisation failed: {0}")]
    OptimizationFailed(String),

    #[error("non-finite likelihood at observation {index}")]
    NonFiniteLikelihood { index: usize },

    #[error("no viable model among the supplied fits")]
    NoViableModel,

    #[error("numerical integration failed: {0}")]
    IntegrationFailure(String),

    #[error("MCMC diagnostic failure: {0}")]
    McmcDiagnosticFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl GeomxError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GeomxError::Config(_) | GeomxError::InvalidParameter(_) | GeomxError::Io(_) => 2,
            GeomxError::InsufficientData(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for GeomxError {
    fn from(e: std::io::Error) -> Self {
        GeomxError::Io(e.to_string())
    }
}

impl From<csv::Error> for GeomxError {
    fn from(e: csv::Error) -> Self {
        GeomxError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GeomxError {
    fn from(e: serde_json::Error) -> Self {
        GeomxError::Io(e.to_string())
    }
}
