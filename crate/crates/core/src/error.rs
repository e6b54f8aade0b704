use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariate second-moment matrix is singular (eigenvalue {eigenvalue:e}, condition number {condition:e})")]
    SingularCovariates { eigenvalue: f64, condition: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("method-of-moments solver did not converge after {iterations} iterations (best RMS residual {best_residual:e})")]
    Convergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("empirical likelihood inner problem infeasible at theta = {theta}")]
    InnerInfeasible { theta: f64 },

    #[error("empirical likelihood infeasible at every theta grid point; try a larger rho")]
    Infeasible,

    #[error("collinear design: {0}")]
    Collinearity(String),

    #[error("bootstrap failed: {failures} of {replicates} replicates could not be refit")]
    Bootstrap { failures: usize, replicates: usize },

    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidArgument(_) => 1,
            Error::Convergence { .. }
            | Error::InnerInfeasible { .. }
            | Error::Infeasible
            | Error::Bootstrap { .. }
            | Error::NotPositiveDefinite(_) => 3,
            _ => 2,
        }
    }

    /// True for failures that come from a numerical solver rather than the data.
    pub fn is_solver_failure(&self) -> bool {
        self.exit_code() == 3
    }
}
