//! Experiment runner, gradient checker and report tool for `orthocond`.
//!
//! Each subcommand is a library function writing its human-readable output
//! to a caller-supplied sink; `main.rs` only parses arguments and maps
//! [`CliError`] to an exit code.

// `!(x >= 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod gradcheck;
pub mod report;
pub mod run;
pub mod trace;

use std::path::PathBuf;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use gradcheck::cmd_gradcheck;
pub use report::cmd_report;
pub use run::cmd_run;

/// Exit status of a successful command.
pub const EXIT_OK: u8 = 0;
/// A check ran and failed (gradient check, ordering claim, training abort).
pub const EXIT_CHECK_FAILED: u8 = 1;
/// Bad configuration, arguments or input files.
pub const EXIT_INPUT: u8 = 2;
/// Filesystem failure.
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Io { .. } => EXIT_IO,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

/// Writes to the console sink. A closed stdout is not worth failing over.
macro_rules! say {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}
pub(crate) use say;
