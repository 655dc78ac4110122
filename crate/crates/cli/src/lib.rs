//! Library half of the `wncs` command-line tool: configuration parsing,
//! the five subcommands, and file emission. The binary is a thin wrapper
//! so tests can drive everything in-process.

pub mod commands;
pub mod config;
pub mod table;

/// Command-line errors, sorted by exit code: schema/usage problems exit
/// with 2, failed checks and infeasible problems with 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Map a core error arising from bad configuration values.
    pub(crate) fn from_core_schema(e: wncs::Error) -> Self {
        CliError::Schema(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Schema(_) | CliError::Io(_) => 2,
        }
    }
}
