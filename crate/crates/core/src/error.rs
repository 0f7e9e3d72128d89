use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// A single failed validation rule, addressed by its key path in the
/// scenario document (e.g. `delta0` or `outcome.sigma[2]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid correlation matrix: {0}")]
    Matrix(String),
    #[error("unsupported dimension {0} (at most {max} supported)", max = crate::mvn::MAX_DIM)]
    UnsupportedDimension(usize),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("power target {target} unreachable with n0 <= {limit:e}")]
    SearchLimit { target: f64, limit: f64 },
    #[error("validation failed: {}", join(.0))]
    Validation(Vec<FieldError>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation(vec![FieldError::new(field, message)])
    }

    /// True for errors caused by user input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Domain(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
