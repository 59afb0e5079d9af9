use thiserror::Error;

use crate::model::AssumptionReport;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The integrator produced a non-finite state or violated its energy tolerance.
    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    /// The model does not satisfy the standing assumptions; the report lists every failed check.
    #[error("model assumptions violated: {}", .0.failures().join("; "))]
    Assumptions(Box<AssumptionReport>),

    /// Every violation found while validating a configuration.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }
}
