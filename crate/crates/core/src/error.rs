//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library. Each variant maps onto one CLI exit code
/// through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error(transparent)]
    Format(#[from] crate::format::FormatError),

    #[error("config: {0}")]
    Config(String),

    /// Malformed tabular or JSON input.
    #[error("parse: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::InfeasibleGeometry(_) => "infeasible-geometry",
            Error::DegenerateFit(_) => "degenerate-fit",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    /// 1 usage, 2 data/parse, 3 numeric/degenerate geometry.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::ShapeMismatch(_)
            | Error::NonFinite(_)
            | Error::Format(_)
            | Error::Config(_)
            | Error::Parse(_)
            | Error::Io(_) => 2,
            Error::DegenerateGeometry(_)
            | Error::InfeasibleGeometry(_)
            | Error::DegenerateFit(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
