use thiserror::Error;

/// Errors raised by network analysis, frame construction and sparsification.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The family does not span the state space at the configured tolerance.
    #[error("family is not a frame (lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e})")]
    NotAFrame { lambda_min: f64, lambda_max: f64 },

    #[error(
        "step size {delta} violates the lattice condition for eigenvalues {first} and {second} \
         (distance to 2*pi*j*Z is {distance:e})"
    )]
    StepSize {
        delta: f64,
        first: String,
        second: String,
        distance: f64,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unobservable: {0}")]
    Unobservable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors that describe an infeasible problem rather than a failure of the tool.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::NotAFrame { .. }
                | Error::StepSize { .. }
                | Error::Precondition(_)
                | Error::Unobservable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
