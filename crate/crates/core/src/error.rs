use std::path::PathBuf;

use crate::sample::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sample {0} is already stored")]
    DuplicateId(SampleId),

    #[error("sample id {id} arrived after id {last}; ids must increase along the stream")]
    IdOutOfOrder { id: SampleId, last: SampleId },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite feature value in sample {0}")]
    NonFiniteFeature(SampleId),

    #[error("eviction protocol violated: {0}")]
    Protocol(String),

    #[error("missing score for sample {0}")]
    IncompleteScores(SampleId),

    #[error("clean ratio is undefined for an empty memory")]
    EmptyMemory,

    #[error("policy index {index} out of range for {count} policies")]
    PolicyOutOfRange { index: usize, count: usize },

    #[error("non-finite model output under augmentation policy {policy}")]
    NonFiniteOutput { policy: usize },

    #[error("non-finite input to the model")]
    NonFiniteInput,

    #[error("non-finite gradient at step {step} (batch of {batch_len}, mean loss {mean_loss})")]
    NonFiniteGradient {
        step: u64,
        batch_len: usize,
        mean_loss: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateId(_) => "duplicate_id",
            Error::IdOutOfOrder { .. } => "id_out_of_order",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFiniteFeature(_) => "non_finite_feature",
            Error::Protocol(_) => "protocol_violation",
            Error::IncompleteScores(_) => "incomplete_scores",
            Error::EmptyMemory => "empty_memory",
            Error::PolicyOutOfRange { .. } => "policy_out_of_range",
            Error::NonFiniteOutput { .. } => "non_finite_output",
            Error::NonFiniteInput => "non_finite_input",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
