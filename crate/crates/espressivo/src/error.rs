//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed Standard MIDI File data. `offset` is the byte position at
    /// which parsing failed.
    #[error("midi parse error at byte {offset}: {message}")]
    MidiParse { offset: usize, message: String },

    /// Audio input violated a precondition (empty, wrong rate, bad format).
    #[error("audio error: {0}")]
    Audio(String),

    /// A note event fell outside the supported piano range or timing rules.
    #[error("invalid note event: {0}")]
    InvalidNote(String),

    /// Inputs whose shapes or lengths must agree did not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Frame-grid parameters violated an invariant.
    #[error("invalid frame grid: {0}")]
    InvalidGrid(String),

    /// A crop request did not fit inside the piece.
    #[error("crop error: {0}")]
    Crop(String),

    /// A loss term became non-finite during training or evaluation.
    #[error("non-finite value in term `{term}`")]
    NonFinite { term: &'static str },

    /// Configuration value out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Checkpoint file rejected (bad magic, version, or truncation).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A piece archive was missing keys or had inconsistent shapes.
    #[error("archive error in {path}: {message}")]
    Archive { path: PathBuf, message: String },

    /// Manifest file problems (missing columns, unreadable rows).
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// WAV encoding/decoding failure.
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    /// Named-array container failure.
    #[error("npz error: {0}")]
    Npz(String),

    /// JSON sidecar / config (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Figure or image encoding failure.
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl From<ndarray_npy::WriteNpzError> for Error {
    fn from(e: ndarray_npy::WriteNpzError) -> Self {
        Error::Npz(e.to_string())
    }
}

impl From<ndarray_npy::ReadNpzError> for Error {
    fn from(e: ndarray_npy::ReadNpzError) -> Self {
        Error::Npz(e.to_string())
    }
}
