//! Commands behind the `allukan` binary: training, evaluation, chunk
//! benchmarks, parameter audits and gradient-mode verification.

pub mod audit;
pub mod bench;
pub mod cli;
pub mod report;
pub mod run;
pub mod verify;

use std::path::{Path, PathBuf};

pub use report::{Check, VerificationReport};

/// Exit code when every check passes.
pub const EXIT_OK: i32 = 0;
/// Exit code for runtime failures and failed checks.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for invalid arguments, configs or preset names.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] allukan_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use allukan_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::UnknownPreset { .. } | E::Config(_)) => {
                EXIT_USAGE
            }
            _ => EXIT_FAILURE,
        }
    }
}
