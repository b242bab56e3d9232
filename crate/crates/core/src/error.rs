use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Newton iteration failed to converge at step {step} (residual {residual:.3e})")]
    Integration { step: usize, residual: f64 },

    #[error("subspace geometry error: {0}")]
    Geometry(String),

    #[error("snapshot matrix carries no energy")]
    NoEnergy,

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("hyper-reduction weights are bound to basis {expected}, got {found}")]
    StaleWeights { expected: String, found: String },

    #[error("model is not trained: {0}")]
    Untrained(String),

    #[error("artifact not found at {}", .0.display())]
    ArtifactNotFound(PathBuf),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_)
                | Error::ArtifactNotFound(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Format(_)
                | Error::Dimension(_)
                | Error::Untrained(_)
                | Error::StaleWeights { .. }
        )
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
