use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("classification error: rank stalled at increment {step} (rank {rank} < {dim})")]
    Classification { step: usize, rank: usize, dim: usize },

    #[error("covariance C(t) is not positive definite at t = {t:e}")]
    Singular { t: f64 },

    #[error("budget error: {0}")]
    Budget(String),

    #[error("empty domain: too few grid nodes inside the cylinder (resolution {resolution:?}; refine the grid)")]
    EmptyDomain { resolution: Vec<usize> },

    #[error("CFL violation: time step {dt:e} exceeds admissible {admissible:e}")]
    Cfl { dt: f64, admissible: f64 },

    #[error("expression error: {0}")]
    Expr(#[from] crate::expr::ExprError),

    #[error("configuration error(s):\n{}", format_config_errors(.0))]
    Config(Vec<crate::config::ConfigError>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn format_config_errors(errs: &[crate::config::ConfigError]) -> String {
    errs.iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
