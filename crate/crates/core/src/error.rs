use thiserror::Error;

/// Errors raised across the simulation and estimation stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no herald possible: the trigger never fires for this source")]
    NoHeraldPossible,

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("batch must be vacuum-calibrated before estimation")]
    CalibrationRequired,

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("ill-conditioned crosstalk model: {0}")]
    IllConditioned(String),

    #[error("state does not fit the heralded loss model: {0}")]
    ModelMismatch(String),

    #[error("unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("not ready: {0}")]
    NotReady(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
