use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mvforge_core::Error;
use serde_json::json;

use crate::API_VERSION;

/// An error response: `{"api_version": 1, "error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::EmptyInput(_) => (StatusCode::BAD_REQUEST, "empty_input"),
            Error::MalformedCsv { .. } => (StatusCode::BAD_REQUEST, "malformed_csv"),
            Error::Infeasible(_) => (StatusCode::UNPROCESSABLE_ENTITY, "infeasible_request"),
            Error::UnknownVersion(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_version"),
            Error::Cardinality(_)
            | Error::Index { .. }
            | Error::InvalidChart(_)
            | Error::Position { .. }
            | Error::TooManyCharts(_)
            | Error::EmptyMv => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_chart"),
            Error::SessionClosed => (StatusCode::CONFLICT, "session_closed"),
            Error::ConsentDenied => (StatusCode::FORBIDDEN, "consent_denied"),
            Error::EmptyDataset | Error::Config(_) | Error::InsufficientHistory => {
                (StatusCode::BAD_REQUEST, "bad_request")
            }
            Error::Version(_) | Error::Layout { .. } | Error::Corrupt(_) => (StatusCode::BAD_REQUEST, "bad_model"),
            Error::Shape(_) | Error::Io(_) | Error::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "api_version": API_VERSION,
            "error": {"code": self.code, "message": self.message},
        });
        (self.status, Json(body)).into_response()
    }
}
