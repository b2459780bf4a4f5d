//! Experiment runner for the flatsaddle toolkit: typed experiment configs,
//! deterministic JSON/CSV artifacts and the cross-module acceptance suite.

pub mod acceptance;
pub mod artifact;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration; `field` is the dotted path of the offending field.
    #[error("usage error at `{field}`: {message}")]
    Usage { field: String, message: String },
    #[error(transparent)]
    Core(#[from] flatsaddle::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn usage(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Usage { field: field.into(), message: message.into() }
    }

    /// Process exit status: 2 for usage errors, 3 for resource overruns, 4
    /// for anything else. Status 1 is reserved for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Core(flatsaddle::Error::Resource { .. }) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "FLATSADDLE_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(THREADS_ENV, format!("`{v}` is not a positive thread count")))?;
    // a second initialisation in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
