//! Persistence and workflow layer for the motion capture pipeline: dataset
//! and calibration files, binary checkpoints, run manifests and the command
//! implementations behind the `poser` binary.

pub mod commands;
pub mod formats;

/// Process exit conventions: 0 success, 1 runtime failure, 2 usage error.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, missing/invalid input files.
    Usage(String),
    /// Legitimate invocation that failed while running.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage_err(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime_err(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}
