use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to diagnose a failure
/// from a log line alone.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("buffer is empty")]
    EmptyBuffer,

    #[error("stream exhausted: requested {requested} more transitions but only {remaining} remain")]
    StreamExhausted { requested: usize, remaining: usize },

    #[error("dataset error at byte offset {offset}: {message}")]
    DatasetFormat { offset: u64, message: String },

    #[error("unknown environment {name:?}; known environments: {known:?}")]
    UnknownEnv { name: String, known: Vec<String> },

    #[error("unknown regularizer preset {0:?}")]
    UnknownPreset(String),

    #[error("episode already finished (step {step} of horizon {horizon})")]
    EpisodeFinished { step: u32, horizon: u32 },

    #[error("spectral normalization collapsed: estimated norm {sigma} is too small to divide by")]
    ZeroSpectralNorm { sigma: f64 },

    #[error("misaligned metric logs: {0}")]
    MisalignedLogs(String),

    #[error("csv error at line {line}: {message}")]
    CsvFormat { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
