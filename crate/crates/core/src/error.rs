//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors surfaced by the public API.
///
/// Shape mismatches between tensors of equal semantic role are treated as
/// programmer error and panic via `assert!`; everything a caller can plausibly
/// get wrong at runtime (domains, configs, file contents, numeric blowups)
/// comes back as an `Error`.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: dimension chains, schedules, task specs, file schemas.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input to an operation (wrong dimensions, missing conditioning).
    #[error("input error: {0}")]
    Input(String),

    /// Argument outside the operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced or encountered non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training-loop failure (non-finite gradient or loss).
    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
