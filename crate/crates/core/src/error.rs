use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ParseError at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("EmptyInput: {0}")]
    EmptyInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("DimensionError: {0}")]
    Dimension(String),

    #[error("InvalidInput: {0}")]
    InvalidInput(String),

    #[error("NotSymmetric: max asymmetry {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("NotPSD: eigenvalue {eigenvalue:e} is negative")]
    NotPsd { eigenvalue: f64 },

    #[error("RankDeficientTargets: lambda_min = {lambda_min:e} <= 1e-10 * lambda_max (lambda_max = {lambda_max:e})")]
    RankDeficientTargets { lambda_min: f64, lambda_max: f64 },

    #[error("UseNoRegularizationSolver: c = lambda_h * lambda_w is zero; use the no-regularization solver instead")]
    UseNoRegularizationSolver,

    #[error("RegimeError: requires c < lambda_min, got c = {c:e}, lambda_min = {lambda_min:e}")]
    Regime { c: f64, lambda_min: f64 },

    #[error("RankDeficientW: rank(W) = {rank} < n = {required}")]
    RankDeficientW { rank: usize, required: usize },

    #[error("DegenerateInput: {0}")]
    Degenerate(String),

    #[error("ConfigMissing: {0}")]
    ConfigMissing(String),

    #[error("DivergenceError: loss {loss:e} at step {step} (last finite step {last_finite_step:?})")]
    Divergence {
        step: usize,
        loss: f64,
        last_finite_step: Option<usize>,
    },

    #[error("NumericalError: {0}")]
    Numerical(String),
}

/// Non-fatal conditions attached to results.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// `c` sits on an eigenvalue of the target covariance, where the optimum is not strict.
    BoundaryC { index: usize, eigenvalue: f64, c: f64 },
    /// Some feature columns were exactly zero and contributed nothing to NRC1/NRC2.
    ZeroFeature { count: usize },
    /// The closed-form gamma lies outside (0, lambda_min).
    OutOfRange { gamma: f64, lambda_min: f64 },
}
