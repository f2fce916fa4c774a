use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants map onto two broad classes: validation problems in the
/// caller's inputs (bad weights, unknown tokens, malformed groups) and
/// I/O or encoding problems. [`Error::is_validation`] separates the two.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid gazetteer entry `{canonical}`: {reason}")]
    InvalidGazetteer { canonical: String, reason: String },

    #[error("query id `{0}` is not listed by any gazetteer entry")]
    UnknownQuery(String),

    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("vocabularies of policy and reference differ")]
    VocabularyMismatch,

    #[error("step {step} is out of range for an output of length {len}")]
    InvalidStep { step: usize, len: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid rollout group: {0}")]
    InvalidGroup(String),

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: line {line}: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config syntax: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }

    /// Short stable identifier, used in machine-readable CLI errors.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidWeights(_) => "invalid_weights",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidGazetteer { .. } => "invalid_gazetteer",
            Error::UnknownQuery(_) => "unknown_query",
            Error::UnknownToken(_) => "unknown_token",
            Error::InvalidVocabulary(_) => "invalid_vocabulary",
            Error::VocabularyMismatch => "vocabulary_mismatch",
            Error::InvalidStep { .. } => "invalid_step",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::InvalidGroup(_) => "invalid_group",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::EmptyInput(_) => "empty_input",
            Error::Checkpoint(_) => "checkpoint",
            Error::Record { .. } => "record",
            Error::Json(_) => "json",
            Error::Toml(_) => "config_syntax",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
