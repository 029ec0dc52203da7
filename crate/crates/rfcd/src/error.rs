//! Error taxonomy shared by the library and the CLI.
//!
//! Three coarse classes map onto process exit codes: validation errors
//! (bad config or arguments, exit 2), numerical errors (singular solves,
//! non-convergence, non-finite values, exit 3) and resource-cap errors
//! (allocations or problem sizes beyond the configured limits, exit 4).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, arguments, or input shapes.
    #[error("validation error: {0}")]
    Validation(String),

    /// Numerical failure: singular curvature, solver non-convergence,
    /// non-finite sample, degenerate flow constants, and the like.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A requested allocation or problem size exceeds the configured cap.
    #[error("resource cap exceeded: {0}")]
    Resource(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn resource(msg: impl Into<String>) -> Self {
        Error::Resource(msg.into())
    }

    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Numerical(_) => 3,
            Error::Resource(_) => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Resource(format!("io: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
