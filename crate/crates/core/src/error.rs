use thiserror::Error;

#[derive(Debug, Error)]
pub enum EthError {
    #[error("fixed point did not converge at w = {w}: residual {residual:e}")]
    NoConvergence { w: String, residual: f64 },

    #[error("singular denominator |nu^2 - (w+m)^2| = {value:e}")]
    SingularDenominator { value: f64 },

    #[error("no grid point has density >= kappa^(1/3) for kappa = {kappa}")]
    EmptyBulk { kappa: f64 },

    #[error("regularization denominator too small: |{value:e}| < 1e-6 (branch {branch})")]
    UnstableDenominator { branch: &'static str, value: f64 },

    #[error("stability eigenvalue vanishes: |beta_{sign}| = {value:e}")]
    SingularStability { sign: &'static str, value: f64 },

    #[error("degenerate spectrum: minimal gap {gap:e}")]
    DegenerateSpectrum { gap: f64 },

    #[error("eigenvalue tracking lost at step {step}: matching cost {cost:e}")]
    TrackingLoss { step: usize, cost: f64 },

    #[error("{got} trials requested, at least {need} required")]
    InsufficientTrials { got: usize, need: usize },

    #[error("quadrature failed ({what}): defect {defect:e}")]
    QuadratureFailure { what: String, defect: f64 },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("no JSON reports found in {0}")]
    NoReports(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EthError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        EthError::Config { field: field.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, EthError>;
