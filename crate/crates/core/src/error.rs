use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver did not converge after {iterations} iterations (dim {dim})")]
    EigenNotConverged { iterations: usize, dim: usize },

    #[error("eigenvector residual {residual:.3e} exceeds bound {bound:.3e}")]
    EigenResidual { residual: f64, bound: f64 },

    #[error("charge-basis cutoff not converged below cap {cap}")]
    CutoffExceeded { cap: usize },

    #[error("level labeling ambiguous for {label} (best overlap {overlap:.3}); {window}")]
    LabelAmbiguity {
        label: String,
        overlap: f64,
        window: String,
    },

    #[error("resonance: {0}")]
    Resonance(String),

    #[error("found {found} peaks with sufficient prominence, need {wanted}")]
    InsufficientPeaks { found: usize, wanted: usize },

    #[error("ill-conditioned problem: {0}")]
    IllConditioned(String),

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("calibration failure: {0}")]
    Calibration(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("estimator failed on {failed} of {total} bootstrap resamples")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
