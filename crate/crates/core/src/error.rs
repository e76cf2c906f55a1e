use thiserror::Error;

/// Errors raised by the scoring engine and evaluators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row `{0}` has zero norm")]
    ZeroNormRow(String),
    #[error("row `{0}` is not unit-norm")]
    NotUnitNorm(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("expected {expected} modality, found {found}")]
    ModalityMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("mean factor must lie in (0, 1], got {0}")]
    InvalidMeanFactor(f64),
    #[error("measure {0} requires {1}")]
    MissingRequirement(&'static str, &'static str),
    #[error("negative reference set is empty")]
    EmptyNegativeSet,
    #[error("reference list is empty")]
    EmptyReferences,
    #[error("embedding set is empty")]
    EmptySet,
    #[error("sample size {n} out of range 1..={len}")]
    SampleSizeOutOfRange { n: usize, len: usize },
    #[error("query `{0}` has no link among the candidates")]
    MissingLink(String),
    #[error("label `{0}` does not resolve to a class prompt")]
    UnknownLabel(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("corpus has no preference pairs")]
    MissingPreferencePairs,
    #[error("score matrices differ in shape or ids")]
    ShapeMismatch,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("at ({query}, {candidate}): {source}")]
    AtPair {
        query: usize,
        candidate: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Strips pair coordinates, returning the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPair { source, .. } => source.root(),
            other => other,
        }
    }
}
