use thiserror::Error;

/// Errors produced by model construction, solving, fitting, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate knots: {0}")]
    DegenerateKnots(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    /// The adaptive step size underflowed, typically because the
    /// exponential right-hand side blew up for the current coefficients.
    #[error("ODE solver failed at t = {last_t}{}: {reason}", subject_note(.subject))]
    SolverFailure {
        last_t: f64,
        reason: String,
        subject: Option<String>,
    },

    #[error("objective is not finite at the initial point")]
    BadInit,

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{0}")]
    Config(String),
}

fn subject_note(subject: &Option<String>) -> String {
    match subject {
        Some(id) => format!(" (subject {id})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn with_subject(self, id: &str) -> Error {
        match self {
            Error::SolverFailure { last_t, reason, subject: None } => Error::SolverFailure {
                last_t,
                reason,
                subject: Some(id.to_string()),
            },
            other => other,
        }
    }
}
