use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

/// Error reply: `{"error": message, "code": code}` with a matching status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unknown_dataset(name: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_dataset", format!("unknown dataset `{name}`"))
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("unknown session `{id}`"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<milt_core::Error> for ApiError {
    fn from(e: milt_core::Error) -> Self {
        use milt_core::Error as E;
        let (status, code) = match &e {
            E::UnknownBag(_) => (StatusCode::NOT_FOUND, "unknown_bag"),
            E::NoModel => (StatusCode::CONFLICT, "no_model"),
            E::Duplicate(_) => (StatusCode::CONFLICT, "duplicate"),
            E::InstanceIndex { .. } => (StatusCode::BAD_REQUEST, "instance_index"),
            E::InvalidArgument(_) => (StatusCode::BAD_REQUEST, "invalid_argument"),
            E::Training(_) => (StatusCode::BAD_REQUEST, "training"),
            E::InfeasibleNu { .. } => (StatusCode::BAD_REQUEST, "infeasible_nu"),
            E::Dimension { .. } => (StatusCode::BAD_REQUEST, "dimension"),
            E::Session(_) => (StatusCode::BAD_REQUEST, "session"),
            E::Json(_) => (StatusCode::BAD_REQUEST, "json"),
            E::Parse { .. } | E::Dataset(_) => (StatusCode::INTERNAL_SERVER_ERROR, "dataset"),
            E::Matrix(_) => (StatusCode::INTERNAL_SERVER_ERROR, "matrix"),
            E::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "code": self.code}))).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
