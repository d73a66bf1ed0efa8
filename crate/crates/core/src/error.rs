use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite coefficient value {value} at t={t}, x=({x1}, {x2})")]
    NonFiniteCoefficient { value: f64, t: f64, x1: f64, x2: f64 },

    #[error("invalid actuator configuration: {0}")]
    InvalidActuators(String),

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("optimization failed: {0}")]
    Solver(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("theory constant `{name}` is not usable: {message}")]
    Constant { name: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn constant(name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Constant {
            name: name.into(),
            message: message.into(),
        }
    }
}
