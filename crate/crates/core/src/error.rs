use thiserror::Error;

use crate::domain::{AppearanceId, ItemId, Prompt, SessionId, SubmissionId, SurveyId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no active prompts")]
    NoActivePrompts,
    #[error("invalid completed-contest count {count} for prompt {prompt:?}")]
    InvalidCount { prompt: Prompt, count: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown survey {0}")]
    UnknownSurvey(SurveyId),
    #[error("unknown item {item} in survey {survey}")]
    UnknownItem { survey: SurveyId, item: ItemId },
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown appearance {0}")]
    UnknownAppearance(AppearanceId),
    #[error("unknown idea submission {0}")]
    UnknownSubmission(SubmissionId),
    #[error("session expired")]
    SessionExpired,
    #[error("{0}")]
    InvalidInput(String),
    #[error("item {item} cannot be served: it is not active")]
    InactiveItem { item: ItemId },
    #[error("idea submission {0} was already moderated")]
    AlreadyModerated(SubmissionId),
    #[error("negative tally: wins={wins}, losses={losses}")]
    NegativeTally { wins: f64, losses: f64 },
    #[error("insufficient data for estimation")]
    InsufficientData { dropped_items: Vec<ItemId> },
    #[error("estimation dataset violates an invariant: {0}")]
    InvalidDataset(String),
    #[error("modeled scores need at least two items")]
    TooFewItems,
    #[error("posterior precision matrix is not positive definite")]
    SingularSystem,
    #[error("R-hat needs {0}")]
    RhatInput(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("mismatched parameter sets: {0}")]
    ParameterMismatch(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
