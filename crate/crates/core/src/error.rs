use alloc::string::String;

use thiserror::Error;

use crate::SampleId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing label for sample {0}")]
    MissingLabel(SampleId),

    #[error("duplicate sample id {id} in modality {modality}")]
    DuplicateId { modality: usize, id: SampleId },

    #[error("label {label} of sample {id} is outside 0..{num_classes}")]
    LabelOutOfRange {
        id: SampleId,
        label: usize,
        num_classes: usize,
    },

    #[error("class {class} has {count} samples, at least {needed} required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },

    #[error("matrix is not symmetric")]
    Asymmetric,

    #[error("kernel matrix is singular even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("undefined cosine similarity (zero-norm embedding)")]
    UndefinedCosine,

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to invalid
    /// inputs or parameters.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularKernel { .. } | Error::Eigensolver(_) | Error::UndefinedCosine
        )
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
