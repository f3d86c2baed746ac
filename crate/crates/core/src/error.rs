use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the forecasting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("non-monotone timestamps at row {row}: {previous} then {current}")]
    NonMonotoneTimestamps {
        row: usize,
        previous: String,
        current: String,
    },

    #[error("frequency inconsistency at row {row}: step of {step_secs}s is not a multiple of {frequency_secs}s")]
    FrequencyMismatch {
        row: usize,
        step_secs: f64,
        frequency_secs: f64,
    },

    #[error("invalid timestamp {value:?} at row {row}")]
    Timestamp { row: usize, value: String },

    #[error("split {split} has {len} rows but a window needs {needed}")]
    SplitTooSmall {
        split: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("rank-deficient design matrix ({rows}x{cols}), condition estimate {condition:e}")]
    RankDeficient {
        rows: usize,
        cols: usize,
        condition: f64,
    },

    #[error("coordinate descent did not converge after {iterations} sweeps (max coefficient change {max_change:e}, gap surrogate {gap:e})")]
    NonConvergence {
        iterations: usize,
        max_change: f64,
        gap: f64,
    },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
