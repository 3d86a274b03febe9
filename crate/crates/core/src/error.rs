use alloc::string::String;
use core::fmt;

/// Error type shared by every core module.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Invalid argument or precondition violation.
    Argument(String),
    /// Numeric failure (singular matrix, failed factorization, non-convergence).
    Numeric(String),
    /// Follower reached or passed the leader (gap <= 0).
    Collision { step: usize, gap: f64 },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Argument(msg) => write!(f, "invalid argument: {msg}"),
            CoreError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            CoreError::Collision { step, gap } => {
                write!(f, "collision at step {step} (gap {gap:.3} m)")
            }
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
