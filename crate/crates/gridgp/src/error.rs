use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:.6e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("triangular factor has a zero diagonal at index {0}")]
    SingularFactor(usize),

    #[error("requested {requested} neighbors but only {available} points are available")]
    InsufficientPoints { requested: usize, available: usize },

    #[error("problem size {n} exceeds the configured ceiling {ceiling}")]
    TooLarge { n: usize, ceiling: usize },

    #[error("optimization did not converge within {evaluations} evaluations")]
    NonConvergence { evaluations: usize },

    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid interval: lower {lower} exceeds upper {upper}")]
    InvalidInterval { lower: f64, upper: f64 },

    #[error("no complete pairs at any requested lag")]
    NoPairs,

    #[error("iterative solver failed: {0}")]
    SolverFailure(String),

    #[error("training set is empty after applying the split")]
    EmptyTrain,

    #[error("test set is empty after applying the split")]
    EmptyTest,

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("unknown method id: {0}")]
    UnknownMethod(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
