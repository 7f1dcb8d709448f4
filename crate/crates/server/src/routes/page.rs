//! The Experiment Address: the public page participants are sent to.

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};

use super::ApiPath;
use crate::{parse_slug, AppState};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn page(title: &str, body: &str) -> String {
    format!(
        "<!doctype html>\n<html lang=\"en\">\n<head><meta charset=\"utf-8\"><meta name=\"viewport\" content=\"width=device-width, initial-scale=1\"><title>{}</title></head>\n<body>\n{}\n</body>\n</html>\n",
        escape(title),
        body
    )
}

/// Serves the web client's `index.html` for open studies when a static
/// directory is configured, a plain landing page otherwise, and a closed
/// notice (without any way to register) for inactive studies.
pub async fn experiment_page(State(s): State<AppState>, ApiPath(slug): ApiPath<String>) -> Response {
    let Some(config) = parse_slug(&slug).and_then(|id| s.platform.experiment(id).ok()) else {
        return (StatusCode::NOT_FOUND, Html(page("Not found", "<h1>Study not found</h1>"))).into_response();
    };
    if !config.is_active() {
        let body = format!(
            "<h1>{}</h1>\n<p class=\"notice\">This study is closed and no longer accepts participants.</p>",
            escape(&config.title)
        );
        return Html(page(&config.title, &body)).into_response();
    }
    if let Some(dir) = &s.settings.static_dir {
        if let Ok(index) = tokio::fs::read_to_string(dir.join("index.html")).await {
            return Html(index).into_response();
        }
    }
    let main = &config.main_page;
    let heading = if main.title.is_empty() { &config.title } else { &main.title };
    let body = format!(
        "<h1>{}</h1>\n<div class=\"main-page\">{}</div>\n<p>Participant API: <code>/api/e/{}</code></p>",
        escape(heading),
        escape(&main.body).replace('\n', "<br>"),
        escape(&slug)
    );
    Html(page(&config.title, &body)).into_response()
}
