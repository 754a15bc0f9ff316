use thiserror::Error;

/// Errors raised by the solvers and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("time {t} outside path horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },

    #[error("time {t} is not a stored grid time")]
    NotOnGrid { t: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("no stopping region on the axis-{axis} grid: {reason}")]
    NoStoppingRegion { axis: usize, reason: String },

    #[error("far edge of the computational box is not inside the stopping region: {0}")]
    FarEdgeNotStopping(String),

    #[error("bisection bracket failure at regime {regime}, x1 = {x1}: G(low) = {g_low:e}, G(high) = {g_high:e}")]
    BracketFailure {
        regime: usize,
        x1: f64,
        g_low: f64,
        g_high: f64,
    },

    #[error("representation requires a constant discount rate, got {0:?}")]
    NonConstantDiscount(Vec<f64>),

    #[error("Monte Carlo noise floor {noise:e} above tolerance {tol:e}; increase n_paths")]
    NoiseFloor { noise: f64, tol: f64 },

    #[error("unstopped fraction {fraction} exceeds the allowed {limit}")]
    Unstopped { fraction: f64, limit: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown strategy '{name}' (registered: {known})")]
    UnknownStrategy { name: String, known: String },
}

impl Error {
    /// Stable snake_case tag of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Assumption(_) => "assumption",
            Error::OutOfHorizon { .. } => "out_of_horizon",
            Error::NotOnGrid { .. } => "not_on_grid",
            Error::NotConverged { .. } => "not_converged",
            Error::NoStoppingRegion { .. } => "no_stopping_region",
            Error::FarEdgeNotStopping(_) => "far_edge_not_stopping",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::NonConstantDiscount(_) => "non_constant_discount",
            Error::NoiseFloor { .. } => "noise_floor",
            Error::Unstopped { .. } => "unstopped",
            Error::NonFinite(_) => "non_finite",
            Error::UnknownStrategy { .. } => "unknown_strategy",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
