use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter violates its domain.
    #[error("invalid parameters: {0}")]
    Domain(String),

    /// The operation is not defined for this model family.
    #[error("unsupported family {family}: {reason}")]
    Unsupported { family: String, reason: String },

    /// A state space or dual space would exceed the configured budget.
    #[error("state space of {states} states exceeds the budget of {budget}")]
    Budget { states: u128, budget: usize },

    /// The equilibrium condition needed for a product measure fails.
    #[error("not at equilibrium: {0}")]
    NotEquilibrium(String),

    /// No closed form exists for the requested parameters.
    #[error("no closed form for these parameters: {0}")]
    NoClosedForm(String),

    /// A linear solve failed (singular or reducible system).
    #[error("linear solve failed: {0}")]
    Singular(String),

    /// An iterative method did not reach its tolerance.
    #[error("did not converge: {what} (best residual {residual:e})")]
    NoConvergence { what: String, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn unsupported(family: impl std::fmt::Debug, reason: impl Into<String>) -> Error {
    Error::Unsupported {
        family: format!("{family:?}"),
        reason: reason.into(),
    }
}
