use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error(
        "Newton solver did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("line search failed at iteration {iteration} (gradient norm {grad_norm:.3e})")]
    LineSearch { iteration: usize, grad_norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("metadata mismatch: {0}")]
    Metadata(String),

    #[error("closure failure in cell {cell} at t = {time}: {source}")]
    Cell {
        cell: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        checkpoint: Box<crate::surrogate::TrainedClosure>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case tag for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Overflow(_) => "overflow",
            Error::NonConvergence { .. } => "non_convergence",
            Error::LineSearch { .. } => "line_search",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Metadata(_) => "metadata",
            Error::Cell { .. } => "closure_failure",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn in_cell(self, cell: usize, time: f64) -> Self {
        Error::Cell {
            cell,
            time,
            source: Box::new(self),
        }
    }
}
