use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the toolkit.
#[derive(Debug, Error)]
pub enum FscError {
    #[error("input point cloud is empty")]
    EmptyInput,

    #[error("point cloud has zero spatial extent")]
    DegenerateExtent,

    #[error("requested {requested} points but only {available} are available")]
    InsufficientPoints { requested: usize, available: usize },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("histogram is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("reference set is empty")]
    EmptyReferenceSet,

    #[error("no surface is visible from the viewpoint")]
    EmptyView,

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl FscError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FscError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        FscError::Parse { path: path.into(), message: message.into() }
    }

    /// Process exit code used by the command-line front end:
    /// 2 user/input error, 3 config/compatibility error, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            FscError::Config(_) | FscError::Checkpoint(_) | FscError::SizeMismatch { .. } => 3,
            FscError::NonFiniteGradient(_)
            | FscError::NonFiniteLoss(_)
            | FscError::DegenerateExtent
            | FscError::NotNormalized { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = FscError> = std::result::Result<T, E>;
