use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum DfrError {
    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(usize),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid basis request: {0}")]
    InvalidBasis(String),

    #[error("invalid quadrature rule: {0}")]
    InvalidQuadrature(String),

    #[error("subdomain {0} contains no integration points")]
    EmptyRestriction(usize),

    #[error("no quadrature rule for box {0}")]
    MissingRule(usize),

    #[error("diverged parameters")]
    DivergedParameters,

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("rank-deficient feature matrix; increase ridge")]
    RankDeficient,

    #[error("zero reference norm")]
    ZeroNorm,

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DfrError {
    /// True when the error signals numerical divergence rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, DfrError::DivergedParameters | DfrError::Diverged(_))
    }
}

pub type Result<T> = std::result::Result<T, DfrError>;
