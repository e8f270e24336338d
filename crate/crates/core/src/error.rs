use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RapError {
    /// A parameter failed validation. `param` names the offending input.
    #[error("invalid `{param}`: {message}")]
    Invalid { param: String, message: String },

    /// The weight law has no randomness in the drift direction, or a derived
    /// constant vanished.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A run would exceed the configured cell/site budget.
    #[error("budget exceeded for {what}: needs {requested} cells, limit {limit}; feasible: {feasible}")]
    Budget {
        what: String,
        requested: usize,
        limit: usize,
        feasible: String,
    },

    /// Adaptive quadrature did not reach its error target.
    #[error("quadrature did not converge: estimated error {estimate:e} above target {target:e}")]
    Quadrature { estimate: f64, target: f64 },

    /// A replica failed; wraps the underlying error with the replica index.
    #[error("replica {replica}: {source}")]
    Replica {
        replica: u64,
        #[source]
        source: Box<RapError>,
    },

    /// Internal consistency violation (a bug, not a user error).
    #[error("internal error: {0}")]
    Internal(String),
}

impl RapError {
    pub fn invalid(param: impl Into<String>, message: impl Into<String>) -> Self {
        RapError::Invalid {
            param: param.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by resource limits rather than bad input.
    pub fn is_budget(&self) -> bool {
        match self {
            RapError::Budget { .. } => true,
            RapError::Replica { source, .. } => source.is_budget(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, RapError>;
