use thiserror::Error;

use crate::estimator::EstimatorError;
use crate::ingest::IngestError;
use crate::report::ReportError;
use crate::synth::SynthError;
use crate::trajectory::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for pipeline and CLI callers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
