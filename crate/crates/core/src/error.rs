use thiserror::Error;

/// Errors produced by the solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user input or a call argument was violated.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Configuration validation failed; one message per offending field.
    #[error("config validation failed:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A factorization hit a (near-)zero pivot, typically a shift placed on
    /// an eigenvalue. Perturb the shift and retry.
    #[error("singular factorization: {0}")]
    SingularShift(String),

    /// An iterative eigensolve did not reach the requested tolerance.
    #[error("no convergence in {context}: best residual {best_residual:.3e}")]
    NoConvergence { context: String, best_residual: f64 },

    /// The computational box is too small for the requested decay criterion.
    #[error("box too small: need e^(-alpha L) <= {required:.1e}, got {actual:.3e} at L = {half_width}")]
    BoxTooSmall {
        half_width: f64,
        required: f64,
        actual: f64,
    },

    /// A bracketing or bisection search could not isolate its target.
    #[error("root search failed: {0}")]
    RootSearch(String),

    /// Golden-value regression mismatch.
    #[error("golden mismatch: {0}")]
    GoldenMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::Config(_) => 2,
            Error::GoldenMismatch(_) => 3,
            Error::SingularShift(_)
            | Error::NoConvergence { .. }
            | Error::BoxTooSmall { .. }
            | Error::RootSearch(_) => 3,
            Error::Io(_) | Error::Json(_) => 3,
        }
    }
}
