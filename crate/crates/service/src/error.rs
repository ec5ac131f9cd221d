use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// Problem-details style error body: `{status, code, message, detail}`.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Option<String>,
}

#[derive(Serialize)]
struct Body<'a> {
    status: u16,
    code: &'a str,
    message: &'a str,
    detail: Option<&'a str>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), detail: None }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn no_session() -> Self {
        Self::new(StatusCode::CONFLICT, "no_session", "no retrieval has been run yet")
            .with_detail("POST /api/retrieval with a dataset and concept set first")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<saescope_core::Error> for ApiError {
    fn from(e: saescope_core::Error) -> Self {
        use saescope_core::Error as E;
        let message = e.to_string();
        match e {
            E::MaxIterations { max_node_size, .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "max_iterations", message).with_detail(format!(
                    "some ball still holds more than {max_node_size} points; the subset probably contains more \
                     than {max_node_size} identical features. Raise max_node_size or narrow the categories."
                ))
            }
            E::Index { .. } => Self::not_found(message),
            E::Validation(_) | E::InvalidParameter(_) | E::Parse { .. } | E::Dimension { .. } => {
                Self::bad_request(message)
            }
            E::EmbeddingMissing(words) => {
                Self::bad_request(message).with_detail(format!("missing concept embeddings: {}", words.join(", ")))
            }
            _ => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            status: self.status.as_u16(),
            code: self.code,
            message: &self.message,
            detail: self.detail.as_deref(),
        };
        (self.status, Json(body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
