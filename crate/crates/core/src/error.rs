use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("degenerate map: {0}")]
    DegenerateMap(String),

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e}){context}")]
    ConvergenceFailure {
        iterations: usize,
        grad_norm: f64,
        context: String,
    },

    #[error("all particle weights vanished at level {level}, time index {k}")]
    WeightCollapse { level: u32, k: usize },

    #[error("degenerate resampling input: {0}")]
    DegenerateResampling(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            Error::ConvergenceFailure { .. } => 3,
            Error::Numerical(_) | Error::DegenerateMap(_) | Error::WeightCollapse { .. } => 4,
            _ => 1,
        }
    }

    /// Attach a `(level, t)` location to a convergence failure.
    pub fn with_fit_context(self, level: u32, t: usize) -> Self {
        match self {
            Error::ConvergenceFailure {
                iterations,
                grad_norm,
                ..
            } => Error::ConvergenceFailure {
                iterations,
                grad_norm,
                context: format!(" while fitting level {level}, step {t}"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
