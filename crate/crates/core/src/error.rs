//! Error types shared across the simulator.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("equalization failed at {freq_hz:.6e} Hz: condition number {cond:.3e} exceeds limit")]
    Equalization { freq_hz: f64, cond: f64 },

    #[error("step control failed to converge: step {step_km:.3e} km below minimum {min_km:.3e} km (local error {err:.3e})")]
    NonConvergence { step_km: f64, min_km: f64, err: f64 },

    #[error("undefined carrier phase: zero cross-correlation between received and reference symbols")]
    UndefinedPhase,

    #[error("ensemble failed: {failed} of {total} realizations errored (first: {first})")]
    Ensemble {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
