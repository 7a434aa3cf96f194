use thiserror::Error;

/// Errors surfaced by the control and learning layers.
///
/// `SafetyViolation` is recoverable by the caller (the simulation records it
/// as a terminal status); `Contract` indicates a caller bug such as a
/// dimension mismatch or an invalid gain.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A barrier was evaluated at or past the boundary of its safe set.
    #[error("safety violation: h(x) = {h:.6e} at x = {state:?}")]
    SafetyViolation { state: Vec<f64>, h: f64 },

    /// A precondition on an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn safety(state: &nalgebra::DVector<f64>, h: f64) -> Self {
        Error::SafetyViolation {
            state: state.iter().copied().collect(),
            h,
        }
    }
}
