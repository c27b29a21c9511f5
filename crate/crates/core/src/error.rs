use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KwsError>;

#[derive(Debug, Error)]
pub enum KwsError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no speech detected")]
    NoSpeech,

    #[error("{path}: {reason}")]
    Wav { path: PathBuf, reason: WavProblem },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("{0}")]
    Evaluation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Distinct ways a WAV file can be unusable.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WavProblem {
    #[error("unsupported format (PCM format tag 1 required)")]
    Format,
    #[error("mono required, found {0} channels")]
    Channels(u16),
    #[error("16-bit samples required, found {0}-bit")]
    BitDepth(u16),
    #[error("sample rate {0} Hz unsupported (16000 Hz required)")]
    SampleRate(u32),
    #[error("malformed file: {0}")]
    Malformed(String),
}

impl KwsError {
    /// True for errors caused by bad input files rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            KwsError::Data(_)
                | KwsError::NoSpeech
                | KwsError::Wav { .. }
                | KwsError::Manifest { .. }
                | KwsError::Checkpoint(_)
                | KwsError::Evaluation(_)
                | KwsError::Io(_)
        )
    }
}
