use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use wikisurvey_core::Error as CoreError;

/// An HTTP error with a JSON `{"error": ...}` body.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::UnknownSurvey(_)
            | CoreError::UnknownItem { .. }
            | CoreError::UnknownSession(_)
            | CoreError::UnknownAppearance(_)
            | CoreError::UnknownSubmission(_) => StatusCode::NOT_FOUND,
            CoreError::SessionExpired => StatusCode::GONE,
            CoreError::NoActivePrompts | CoreError::InactiveItem { .. } | CoreError::AlreadyModerated(_) => {
                StatusCode::CONFLICT
            }
            CoreError::InvalidInput(_) | CoreError::InvalidConfig(_) | CoreError::Csv(_) => StatusCode::BAD_REQUEST,
            CoreError::InsufficientData { .. } | CoreError::TooFewItems => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = match &e {
            CoreError::InsufficientData { dropped_items } if !dropped_items.is_empty() => {
                let ids: Vec<String> = dropped_items.iter().map(|i| i.to_string()).collect();
                format!("{e} (dropped items: {})", ids.join(", "))
            }
            _ => e.to_string(),
        };
        Self::new(status, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}
