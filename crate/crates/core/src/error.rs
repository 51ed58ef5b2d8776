use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid angular momentum j = {0}: must be a non-negative half-integer")]
    InvalidSpin(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },

    #[error("semantic error at line {line}: {message}")]
    Semantic { line: usize, message: String },

    #[error("unbound scan variable `${0}`")]
    UnboundVariable(String),

    #[error("invalid sequence: {0}")]
    Sequence(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("fit did not converge after {iterations} iterations: {message}")]
    NonConvergence { iterations: usize, message: String },

    #[error("parameter not identifiable: {0}")]
    NonIdentifiable(String),

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Coarse classification used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidSpin(_)
            | Error::InvalidArgument(_)
            | Error::Syntax { .. }
            | Error::Semantic { .. }
            | Error::UnboundVariable(_)
            | Error::Sequence(_) => ErrorKind::Simulation,
            Error::DegenerateData(_) | Error::NonConvergence { .. } | Error::NonIdentifiable(_) => ErrorKind::Fit,
            Error::Dataset(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorKind::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Simulation,
    Fit,
    Io,
}
