use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported system dimension {0} (only d = 2 is supported here)")]
    UnsupportedDimension(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: {what} (estimate {estimate:e}, error {error:e}, {evaluations} evaluations)")]
    Quadrature {
        what: String,
        estimate: f64,
        error: f64,
        evaluations: usize,
    },

    #[error("bond dimension exceeded cap {max_bond} at step {step}, bond {bond}: {kept} singular values above cutoff, tail {tail:?}")]
    BondExplosion {
        step: usize,
        bond: usize,
        kept: usize,
        max_bond: usize,
        tail: Vec<f64>,
    },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid process tensor file: {0}")]
    Format(String),

    #[error("unsupported process tensor format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("payload integrity check failed: expected sha256 {expected}, found {found}")]
    Integrity { expected: String, found: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::Io { .. }
                | Error::Format(_)
                | Error::Version { .. }
                | Error::Integrity { .. }
                | Error::Precondition(_)
                | Error::Domain(_)
                | Error::Dimension(_)
                | Error::UnsupportedDimension(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
