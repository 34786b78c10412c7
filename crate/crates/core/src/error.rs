use alloc::string::String;

use crate::ad::AdError;
use crate::camera::CameraError;
use crate::codec::FormatError;
use crate::hand::HandError;

/// Errors from model construction, loss assembly, training and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model is frozen")]
    Frozen,
    #[error("teacher must be frozen before distillation")]
    TeacherNotFrozen,
    #[error("{0} is required by this distillation mode")]
    MissingTeacherArtifact(&'static str),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("degenerate point set: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for failures that stem from numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Camera(CameraError::NonPositiveDepth { .. })
                | Error::Ad(AdError::NonPositiveDepth { .. })
        )
    }
}
