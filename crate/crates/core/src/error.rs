use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsneError>;

#[derive(Debug, Error)]
pub enum DsneError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{0}")]
    Usage(String),

    #[error("non-finite value at point {point}, iteration {iteration}: {detail}")]
    Numerical {
        point: usize,
        iteration: usize,
        detail: String,
    },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DsneError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        DsneError::Usage(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            DsneError::Numerical { .. } => 3,
            _ => 2,
        }
    }
}
