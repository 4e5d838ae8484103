use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension {0}: the ellipsoid needs at least two dimensions")]
    InvalidDimension(usize),

    #[error("invalid radius {0}: must be positive and finite")]
    InvalidRadius(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The knowledge set is numerically flat along the queried direction.
    #[error("degenerate direction: x'Ax = {quadratic:e} is below the numeric floor")]
    DegenerateDirection { quadratic: f64 },

    #[error("invalid cut position alpha = {alpha} (valid range [{lo}, {hi}))")]
    InvalidCutPosition { alpha: f64, lo: f64, hi: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("feature norm {norm} exceeds the bound S = {bound}")]
    FeatureNorm { norm: f64, bound: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("empty run: no round records")]
    EmptyRun,

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
