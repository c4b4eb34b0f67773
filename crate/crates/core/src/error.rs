use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected} states, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("delay law evaluated at non-positive state x_n = {x_n}")]
    DelayDomain { x_n: f64 },

    #[error("x_n = {x_n} fell to or below the positivity floor phi1 = {phi1} at t = {t}")]
    StateFloor { t: f64, x_n: f64, phi1: f64 },

    #[error("derivative order {order} unsupported (maximum {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("missing derivative oracle of order {order} for {map}")]
    MissingDerivative { map: String, order: usize },

    #[error("history timestamps must increase: last {last}, got {got}")]
    NonMonotoneTime { last: f64, got: f64 },

    #[error("negative input {u} at t = {t}")]
    NegativeInput { t: f64, u: f64 },

    #[error("state x{index} = {value} below positivity tolerance at t = {t}")]
    PositivityViolation { t: f64, index: usize, value: f64 },

    #[error("non-finite {what} at t = {t}")]
    NonFinite { t: f64, what: &'static str },

    #[error("error norm {norm} reached the bound psi = {psi} at t = {t}")]
    Divergence { t: f64, norm: f64, psi: f64 },

    #[error("monitor window [{need_from}, {at}] not covered (oldest sample at {have_from})")]
    InsufficientWindow {
        at: f64,
        need_from: f64,
        have_from: f64,
    },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("certificate infeasible: {0}")]
    Infeasible(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors raised while validating inputs, before anything runs.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::DimensionMismatch { .. }
                | Error::Config { .. }
                | Error::UnknownPreset(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
