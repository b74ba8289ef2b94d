//! Error type shared by every module of the crate.

use alloc::string::String;

/// Errors raised by the numerics, collectives, cost model and planners.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A NaN or infinity reached a numeric kernel.
    #[error("non-finite value in {what} at token {token}, hidden index {index}")]
    NonFinite {
        /// Which operand held the value.
        what: &'static str,
        /// Token (row) index.
        token: usize,
        /// Hidden (column) index.
        index: usize,
    },
    /// Invalid static configuration (world size, profile, policy).
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation's precondition was violated by its caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A calibration table could not be fitted.
    #[error("calibration error: {0}")]
    Calibration(String),
}

/// Crate result alias.
pub type Result<T> = core::result::Result<T, Error>;
