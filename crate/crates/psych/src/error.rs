use thiserror::Error;

use crate::trials::Shortfall;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("insufficient stimuli: {}", .0.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("; "))]
    Shortfall(Vec<Shortfall>),
    #[error("record for unknown trial {0}")]
    UnknownTrial(String),
    #[error("{0}")]
    Invalid(String),
    #[error("curves differ in eccentricities: {0:?} vs {1:?}")]
    GridMismatch(Vec<f64>, Vec<f64>),
    #[error(transparent)]
    Core(#[from] periph_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
