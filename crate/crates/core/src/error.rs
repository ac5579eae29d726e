use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("trajectory left the finite domain at t = {t}")]
    NonFinite { t: f64 },

    #[error("prefactor phase jumped by {jump:.3} rad at t = {t}; reduce the time step")]
    PrefactorBranch { t: f64, jump: f64 },

    #[error("linearized bath determinant is not positive ({det:e}) at t = {t}")]
    BathDeterminant { t: f64, det: f64 },

    #[error("eigenvalues not converged under grid refinement: max change {change:e}")]
    NotConverged { change: f64 },

    #[error("thermal population {population:e} of the highest retained state exceeds {threshold:e}")]
    Truncation { population: f64, threshold: f64 },

    #[error("malformed result file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Configuration problems map to exit code 2, numerical failures to 3.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parameter(_) | Error::Toml(_) | Error::Dimension { .. }
        )
    }
}
