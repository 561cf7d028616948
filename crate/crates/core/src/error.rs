use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants fall into three families that the CLI maps onto exit codes:
/// configuration problems, data problems, and broken internal invariants.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown raw label(s): {}", .0.join(", "))]
    UnknownLabel(Vec<String>),

    #[error("label mapping: {0}")]
    Mapping(String),

    #[error("all-zero emotion distribution")]
    ZeroDistribution,

    #[error("invalid emotion distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate dataset: mean intensity is zero")]
    DegenerateDataset,

    #[error("unsatisfiable packing: {0}")]
    Unsatisfiable(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("zero-energy waveform")]
    ZeroEnergy,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("zero-variance column {0}")]
    ZeroVariance(usize),

    #[error("training diverged at epoch {0}")]
    Diverged(usize),

    #[error("feature file: {0}")]
    Format(String),

    #[error("stage {stage} failed on sample {sample}: {source}")]
    Stage {
        stage: &'static str,
        sample: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the pipeline stage and the sample being processed.
    pub fn at_stage(self, stage: &'static str, sample: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            sample: sample.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Mapping(_) => ErrorKind::Config,
            Error::Invariant(_) => ErrorKind::Internal,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
