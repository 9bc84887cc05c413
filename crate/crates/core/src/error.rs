use thiserror::Error;

/// Errors produced anywhere in the estimation and detection pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient history: need step {needed}, history starts at {available}")]
    History { needed: i64, available: i64 },

    #[error("graph is not strongly connected after {attempts} attempts")]
    NotStronglyConnected { attempts: usize },

    #[error("distributed observability violated: rank {rank} < {dim}")]
    NotObservable { rank: usize, dim: usize },

    #[error("degenerate gain: isolation ratio denominator vanishes for cav {cav}, channel {channel}")]
    DegenerateGain { cav: usize, channel: usize },

    #[error("no stabilizing gain in the search family: {0}")]
    GainSearch(String),

    #[error("unbounded covariance: ||A_hat||_2 = {beta} >= 1")]
    Unbounded { beta: f64 },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("scenario validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
