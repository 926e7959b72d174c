//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape does not match what an operation expects. `site` names
    /// the layer or operation that detected the mismatch.
    #[error("shape mismatch in {site}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        site: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// A scalar argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A schedule could not be constructed or validated.
    #[error("schedule: {0}")]
    Schedule(String),

    /// Schedule evaluated outside its covered iteration range.
    #[error("iteration {iter} out of schedule range [0, {total})")]
    IterOutOfRange { iter: u64, total: u64 },

    /// A tensor produced or consumed a non-finite value.
    #[error("non-finite value in tensor '{name}'")]
    NonFinite { name: String },

    /// Training loss became non-finite; synchronous SGD aborts the run.
    #[error("training diverged: non-finite loss at iteration {iter}")]
    Diverged { iter: u64 },

    /// Collective communication failed (peer disconnect, bad frame, ...).
    #[error("transport: {0}")]
    Transport(String),

    /// Invalid cluster or run configuration.
    #[error("config: {0}")]
    Config(String),

    /// Binary or CSV (de)serialization failure.
    #[error("format: {0}")]
    Format(String),

    /// Performance-table lookup for an unknown (workers, local_batch) pair.
    #[error("no calibration row for workers={workers}, local_batch={local_batch}; known rows: {known}")]
    UnknownPerfRow {
        workers: u32,
        local_batch: u32,
        known: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
