use thiserror::Error;

/// Errors surfaced by the estimation, learning and protocol layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Rejected configuration value (non-positive threshold, bad dimension, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input file could not be parsed; line numbers are 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input parsed but violates a structural rule (e.g. non-monotone index).
    #[error("format error: {0}")]
    Format(String),

    /// A message violated the wire contract (unknown tag, bad ordering, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A frame was truncated or its payload length is inconsistent.
    #[error("frame error: {0}")]
    Frame(String),

    /// An operation needed more samples than the window holds.
    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// No dominant cycle found in the analysis window.
    #[error("no cycle detected in window")]
    NoCycle,

    /// A requested simulation cannot terminate or has no spread.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    /// Internal state violated an invariant (corrupted index, ...).
    #[error("state corruption: {0}")]
    StateCorruption(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
