use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use musemo::session::{BundleError, IngestError, JournalError, PlanError, SessionError};
use serde_json::json;

/// Every failure the API reports. Conflicts with session state map to 409
/// and malformed or out-of-range input to 422.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::Conflict(_) => "conflict",
            ApiError::Validation(_) => "validation",
            ApiError::Internal(_) => "internal",
        }
    }

    pub(crate) fn io(e: std::io::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::OutOfWindow { .. }
            | SessionError::DuplicateRating(_)
            | SessionError::ArithmeticOutOfWindow { .. }
            | SessionError::NotStartable(_) => ApiError::Conflict(msg),
            SessionError::Validation(_) | SessionError::UnknownTrial(_) => {
                ApiError::Validation(msg)
            }
            SessionError::ClockRegression { .. }
            | SessionError::BadClock(_)
            | SessionError::Timeline(_) => ApiError::Internal(msg),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(e) => ApiError::Internal(e.to_string()),
            other => ApiError::Validation(other.to_string()),
        }
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        ApiError::Validation(e.to_string())
    }
}

impl From<JournalError> for ApiError {
    fn from(e: JournalError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<BundleError> for ApiError {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::NotStarted(_) | BundleError::NotFinished(_) => {
                ApiError::Conflict(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (
            self.status(),
            Json(json!({ "error": self.kind(), "message": self.to_string() })),
        )
            .into_response()
    }
}
