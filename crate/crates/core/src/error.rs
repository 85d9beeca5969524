use thiserror::Error;

/// Errors produced by distribution primitives, objectives, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed data: wrong length, non-finite entries, out-of-range ids.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value outside its legal range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A divergence evaluated to +inf in exact-zeros mode.
    #[error("divergence is infinite: {0}")]
    DivergenceInfinite(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {reason}")]
    TrainingDiverged { step: u64, reason: String },

    /// Malformed file contents: bad magic, version, or field values.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
