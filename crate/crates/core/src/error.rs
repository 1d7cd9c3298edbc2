use std::fmt;

use thiserror::Error;

/// A single problem found while parsing or validating a configuration document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("no instability detected: Φ(s) ≤ s² on the whole bracket (a-priori bound {upper_bound:e})")]
    NoInstability { upper_bound: f64 },

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("time step dt = {dt:e} exceeds the advective limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("density floor breached: min(ρ+ρ₀) = {min:e} < σ/2 = {floor:e}")]
    DensityFloor { min: f64, floor: f64 },

    #[error("solver quality check failed: {0}")]
    SolverQuality(String),

    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            message: message.into(),
            residual,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Structural(_) | Error::Precondition(_) | Error::Domain(_) => 2,
            Error::Numerical { .. }
            | Error::NoInstability { .. }
            | Error::Bracketing(_)
            | Error::Cfl { .. }
            | Error::DensityFloor { .. }
            | Error::SolverQuality(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
