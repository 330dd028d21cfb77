use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("degenerate basis: |det| = {0:e}")]
    DegenerateBasis(f64),
    #[error("window has empty interior")]
    EmptyWindow,
    #[error("projection is not injective: {0}")]
    NotInjective(String),
    #[error("query radius {0} exceeds guard {1}")]
    RadiusGuard(f64, f64),
    #[error("fewer than two points in region")]
    TooFewPoints,
    #[error("v . b = {0} is not an incoming configuration")]
    NotIncoming(f64),
    #[error("impact parameter norm {0} is not below 1")]
    ImpactOutOfRange(f64),
    #[error("no turning point found for w = {0}")]
    NoTurningPoint(f64),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("deflection angle {0} outside the range of the map")]
    OutOfRange(f64),
    #[error("time {0} beyond sampled horizon {1}")]
    BeyondHorizon(f64, f64),
    #[error("histogram bins do not match: {0}")]
    BinMismatch(String),
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
