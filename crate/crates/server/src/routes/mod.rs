mod admin;
mod page;
mod participant;

use std::net::SocketAddr;

use axum::extract::rejection::PathRejection;
use axum::extract::{ConnectInfo, FromRequest, FromRequestParts, Path, Query};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use crate::error::ApiError;
use crate::AppState;

#[derive(FromRequest)]
#[from_request(via(Json), rejection(ApiError))]
pub(crate) struct ApiJson<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(Path), rejection(ApiError))]
pub(crate) struct ApiPath<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(Query), rejection(ApiError))]
pub(crate) struct ApiQuery<T>(pub T);

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

/// Decodes a JSON body that may be absent altogether.
pub(crate) fn optional_body<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

pub(crate) fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// Remote address, for rate limiting; "unknown" when not served over TCP.
pub(crate) struct ClientAddr(pub String);

impl<S: Send + Sync> FromRequestParts<S> for ClientAddr {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        Ok(ClientAddr(
            parts
                .extensions
                .get::<ConnectInfo<SocketAddr>>()
                .map_or_else(|| "unknown".to_owned(), |c| c.0.ip().to_string()),
        ))
    }
}

async fn openapi() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], crate::OPENAPI)
}

async fn health() -> impl IntoResponse {
    Json(serde_json::json!({"status": "ok"}))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    let admin = Router::new()
        .route("/login", post(admin::login))
        .route("/logout", post(admin::logout))
        .route("/agents", get(admin::list_agents).post(admin::create_agent))
        .route(
            "/agents/{id}",
            get(admin::get_agent).put(admin::update_agent).delete(admin::delete_agent),
        )
        .route("/forms", get(admin::list_forms).post(admin::create_form))
        .route("/form-templates", get(admin::form_templates))
        .route(
            "/forms/{id}",
            get(admin::get_form).put(admin::update_form).delete(admin::delete_form),
        )
        .route("/experiments", get(admin::list_experiments).post(admin::create_experiment))
        .route("/experiments/import", post(admin::import_experiment))
        .route("/experiments/{id}", get(admin::get_experiment).put(admin::update_experiment))
        .route("/experiments/{id}/status", put(admin::set_status))
        .route("/experiments/{id}/summary", get(admin::summary))
        .route("/experiments/{id}/address", get(admin::address))
        .route("/experiments/{id}/export", get(admin::export));

    let participant = Router::new()
        .route("/", get(participant::info))
        .route("/register", post(participant::register))
        .route("/login", post(participant::login))
        .route("/me", get(participant::me))
        .route("/conversations", post(participant::start))
        .route("/conversations/{sid}", get(participant::conversation))
        .route("/conversations/{sid}/messages", post(participant::send))
        .route("/conversations/{sid}/finish", post(participant::finish))
        .route("/messages/{mid}/annotation", post(participant::annotate));

    let api = Router::new()
        .route("/health", get(health))
        .route("/openapi.json", get(openapi))
        .nest("/admin", admin)
        .nest("/e/{slug}", participant)
        .fallback(api_not_found);

    let mut app = Router::new()
        .nest("/api", api)
        .route("/e/{slug}", get(page::experiment_page));
    if let Some(dir) = &state.settings.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(TraceLayer::new_for_http()).with_state(state)
}
