use thiserror::Error;

/// Errors surfaced by the inference engine.
///
/// `DegenerateWeights` is recoverable at the orchestrator level (the affected
/// island is written off); `FatalDegeneracy` means every island collapsed at
/// once and the run cannot continue past that observation.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input slice or matrix has the wrong shape or non-finite contents.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Every particle weight in one filter underflowed to zero at time `t`.
    #[error("all particle weights vanished at time {t}")]
    DegenerateWeights { t: usize },

    /// Every island weight vanished at time `t`; the run is aborted.
    #[error("all island weights vanished at time {t}")]
    FatalDegeneracy { t: usize },

    /// A replay journal failed a structural check and cannot be trusted.
    #[error("journal corrupt: {0}")]
    JournalCorrupt(String),

    /// JSON (de)serialization of a journal or trace failed.
    #[error("serialization: {0}")]
    Serialization(String),

    /// The model does not implement an optional capability that was requested.
    #[error("model does not support {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
