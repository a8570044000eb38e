//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside its mathematical domain.
    #[error("{name} = {value} outside {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    /// A device index exceeded the number of configured devices.
    #[error("device index {index} out of range for {count} devices")]
    DeviceIndex { index: usize, count: usize },

    /// Two vectors that must agree in length did not.
    #[error("length mismatch: {left_name} has {left}, {right_name} has {right}")]
    LengthMismatch {
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    },

    /// An input carried a NaN or infinity where a finite value is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Caller-supplied state contradicts itself (e.g. a delivery recorded
    /// against a zero success probability).
    #[error("inconsistent input: {context}")]
    Inconsistent { context: String },

    /// A configuration field failed validation.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// An iterative solver could not reach its contract.
    #[error("solver failure: {context}")]
    Solver { context: String },
}
