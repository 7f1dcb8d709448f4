use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use parley_core::{PlatformError, RejectReason, Violation};

/// Every error body is `{"error": code, "message": text, "details": [...]}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Vec<Violation>,
    pub retry_after: Option<Duration>,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    message: &'a str,
    details: &'a [Violation],
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Vec::new(),
            retry_after: None,
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid credentials")
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn rate_limited(retry_after: Duration) -> Self {
        Self {
            retry_after: Some(retry_after),
            ..Self::new(StatusCode::TOO_MANY_REQUESTS, "rate_limited", "too many failed logins; try again later")
        }
    }

    /// Fields in order, for tests and clients.
    pub fn body_json(&self) -> serde_json::Value {
        serde_json::to_value(Body {
            error: self.code,
            message: &self.message,
            details: &self.details,
        })
        .expect("error body serializes")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut response = (self.status, Json(self.body_json())).into_response();
        if let Some(after) = self.retry_after {
            let secs = after.as_secs().max(1).to_string();
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from_str(&secs).expect("digits"));
        }
        response
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            PlatformError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            PlatformError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            PlatformError::Rejected(RejectReason::ExperimentFull) => (StatusCode::CONFLICT, "experiment_full"),
            PlatformError::Rejected(RejectReason::UsernameTaken) => (StatusCode::CONFLICT, "username_taken"),
            PlatformError::Rejected(RejectReason::ExperimentInactive) | PlatformError::Inactive => {
                (StatusCode::FORBIDDEN, "experiment_inactive")
            }
            PlatformError::QuotaExceeded => (StatusCode::FORBIDDEN, "quota_exceeded"),
            PlatformError::Busy => (StatusCode::CONFLICT, "busy"),
            PlatformError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            PlatformError::FeatureDisabled(_) => (StatusCode::FORBIDDEN, "feature_disabled"),
            PlatformError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            PlatformError::Export(_) | PlatformError::Store(_) => {
                tracing::error!(error = %e, "internal error");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        let mut err = ApiError::new(status, code, message);
        if let PlatformError::Invalid(v) = e {
            err.details = v;
        }
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}
