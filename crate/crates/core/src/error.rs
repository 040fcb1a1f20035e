use thiserror::Error;

/// Failures surfaced by the solvers and the experiment driver.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite state at t = {time} ({context})")]
    NonFiniteState { time: f64, context: &'static str },

    #[error(
        "degenerate interpolation density at mu = {mu}: min denominator {min_denominator:e} (max {max_denominator:e})"
    )]
    DegenerateDensity {
        mu: f64,
        min_denominator: f64,
        max_denominator: f64,
    },

    #[error("density has no positive mass")]
    ZeroMass,

    #[error("malformed dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MfgError {
    pub fn config(msg: impl Into<String>) -> Self {
        MfgError::Config(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            MfgError::Config(_) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            MfgError::Config(_) => "ConfigError",
            MfgError::NonFiniteState { .. } => "NonFiniteState",
            MfgError::DegenerateDensity { .. } => "DegenerateDensity",
            MfgError::ZeroMass => "ZeroMass",
            MfgError::Format(_) => "FormatError",
            MfgError::Io(_) | MfgError::Csv(_) => "IoError",
            MfgError::Json(_) => "FormatError",
        }
    }
}

pub type Result<T> = std::result::Result<T, MfgError>;
