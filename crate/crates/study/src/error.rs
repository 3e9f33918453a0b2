use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("split {0:?} is not part of this study")]
    UnknownSplit(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("item {item_id} already answered {previous:?} by rater {rater}")]
    Conflict { item_id: String, rater: String, previous: String },
    #[error("split {0} has no samples to draw from")]
    EmptySplit(String),
    #[error(transparent)]
    Core(#[from] stormloc::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StudyError {
    pub fn status(&self) -> StatusCode {
        match self {
            StudyError::UnknownItem(_) | StudyError::UnknownSplit(_) => StatusCode::NOT_FOUND,
            StudyError::BadRequest(_) | StudyError::EmptySplit(_) => StatusCode::BAD_REQUEST,
            StudyError::Conflict { .. } => StatusCode::CONFLICT,
            StudyError::Core(_) | StudyError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}
