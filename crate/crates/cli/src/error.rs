use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A validation suite reported at least one failing check.
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const INTERNAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] gaps::Error),

    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{failed} check(s) failed")]
    ChecksFailed { failed: usize },

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use gaps::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(E::InvalidArgument(_) | E::DimensionMismatch { .. }) => exit::CONFIG,
            CliError::Core(e) if e.is_numerical() => exit::NUMERIC,
            CliError::Core(E::NonPositiveRegret { .. } | E::EmptyGrid) => exit::NUMERIC,
            CliError::Core(_) => exit::INTERNAL,
            CliError::Io { .. } | CliError::Internal(_) => exit::INTERNAL,
            CliError::ChecksFailed { .. } => exit::CHECK_FAILED,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
