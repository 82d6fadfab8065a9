use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

/// One failed item of a batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItemFailure {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("output directory {0} is not empty; pass --force to write into it")]
    OutputExists(PathBuf),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] periph_core::Error),
    #[error(transparent)]
    Psych(#[from] periph_psych::Error),
    #[error(transparent)]
    Store(#[from] periph_service::StoreError),
    #[error(transparent)]
    Replay(#[from] periph_service::ReplayError),
    #[error("{} of {total} items failed", .items.len())]
    Batch { total: usize, items: Vec<ItemFailure> },
    #[error("rerun differs from the manifest in {} files", .0.len())]
    Mismatch(Vec<ItemFailure>),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for anything the operator must fix before rerunning, 1 for
    /// failures at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::OutputExists(_) => 2,
            CliError::Core(periph_core::Error::Config(_)) => 2,
            CliError::Psych(periph_psych::Error::Config(_)) => 2,
            _ => 1,
        }
    }

    pub fn items(&self) -> Vec<ItemFailure> {
        match self {
            CliError::Batch { items, .. } | CliError::Mismatch(items) => items.clone(),
            CliError::Psych(periph_psych::Error::Shortfall(s)) => s
                .iter()
                .map(|s| ItemFailure {
                    item: format!("{}@{}", s.condition, s.eccentricity_deg),
                    error: s.to_string(),
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
