use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated scan file: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("initialization needs {needed:.3} s of IMU data, got {got:.3} s")]
    InsufficientSamples { needed: f64, got: f64 },
    #[error("sensor not static during initialization (gyro std {std:.4} rad/s > {limit:.4})")]
    NotStatic { std: f64, limit: f64 },
    #[error("query time {t:.6} outside IMU span [{start:.6}, {end:.6}]")]
    Extrapolation { t: f64, start: f64, end: f64 },
    #[error("empty IMU sample set")]
    EmptySamples,
    #[error("degenerate scan: only {found} valid correspondences (need {required})")]
    DegenerateScan { found: usize, required: usize },
    #[error("degenerate patch: intensity spread {sigma:e} below {eps:e}")]
    DegeneratePatch { sigma: f64, eps: f64 },
    #[error("azimuth undefined for a point on the sensor axis")]
    UndefinedAzimuth,
    #[error("non-monotone stamp {stamp:.6} after {last:.6}")]
    NonMonotonicStamp { stamp: f64, last: f64 },
    #[error("non-finite cost during optimization: {0}")]
    NonFiniteCost(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("trajectory association failed: {0}")]
    Association(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
