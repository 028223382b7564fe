use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("formula error: {0}")]
    Formula(String),

    #[error("unknown factor '{0}'")]
    UnknownFactor(String),

    #[error("unknown level '{level}' for factor '{factor}'")]
    UnknownLevel { factor: String, level: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },

    #[error("unsupported random structure: {0}")]
    UnsupportedRandom(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("inestimable: {0}")]
    Inestimable(String),

    #[error("REML did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("covariance matrix V is numerically singular")]
    SingularV,

    #[error("scale mismatch: {0}")]
    ScaleMismatch(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
