use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("degenerate velocity: norm {norm:e} below floor")]
    DegenerateVelocity { norm: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable one-word class used by the command line for machine-parsable failures.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "DimensionError",
            Error::DegenerateVelocity { .. } => "DegenerateVelocity",
            Error::Contract(_) => "ContractError",
            Error::NonFinite(_) => "NonFiniteError",
            Error::Config(_) => "ConfigError",
            Error::MissingInput(_) => "MissingInput",
            Error::Format { .. } => "FormatError",
            Error::Io(_) => "IoError",
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }
}
