use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;
use crate::domain::{ItemId, UserId};
use crate::template::TemplateError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("no interactions for user {0}")]
    NoInteractions(UserId),

    #[error("window exceeds set size (window {window}, set size {set_size})")]
    WindowExceedsSet { window: usize, set_size: usize },

    #[error("missing description for item {0}")]
    MissingDescription(ItemId),

    #[error("item {0} has no ground-truth label")]
    UnlabeledItem(ItemId),

    #[error("item {0} is not in the catalog")]
    UnknownItem(ItemId),

    #[error("no usable assessment")]
    NoUsableAssessment,

    #[error("target {0} is not in the ranking")]
    TargetNotRanked(ItemId),

    #[error("not enough items to sample: need {needed}, have {available}")]
    InsufficientItems { needed: usize, available: usize },

    #[error("requested {requested} users but only {eligible} are eligible ({stats})")]
    InsufficientUsers { requested: usize, eligible: usize, stats: String },

    #[error("too many malformed rows in {path}: {malformed} of {total}")]
    MalformedInput { path: PathBuf, malformed: usize, total: usize },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Template(#[from] TemplateError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid { what, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
