use axum::body::Bytes;
use axum::extract::{FromRequestParts, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use parley_core::export::{json_file_name, ExportBundle, ExportFormat, Table};
use parley_core::forms::FormDefinition;
use parley_core::store::ExperimentSummary;
use parley_core::{AgentConfig, AgentId, ExperimentConfig, ExperimentId, ExperimentStatus, FormId, Violation};

use super::{bearer, ApiJson, ApiPath, ApiQuery, ClientAddr};
use crate::error::ApiError;
use crate::{slug, AppState};

/// Proof of a valid admin token.
pub struct Admin;

impl FromRequestParts<AppState> for Admin {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let token = bearer(&parts.headers).ok_or_else(ApiError::unauthorized)?;
        state.admin_tokens.get(token).ok_or_else(ApiError::unauthorized)?;
        Ok(Admin)
    }
}

#[derive(Deserialize)]
pub struct LoginRequest {
    username: String,
    password: String,
}

#[derive(Serialize)]
pub struct TokenResponse {
    pub token: String,
    pub expires_at: chrono::DateTime<Utc>,
}

pub async fn login(
    State(state): State<AppState>,
    ClientAddr(client): ClientAddr,
    ApiJson(req): ApiJson<LoginRequest>,
) -> Result<Json<TokenResponse>, ApiError> {
    state.limiter.check(&client).map_err(ApiError::rate_limited)?;
    let admin = state.admin.clone();
    let ok = tokio::task::spawn_blocking(move || admin.verify(&req.username, &req.password))
        .await
        .unwrap_or(false);
    if !ok {
        state.limiter.record_failure(&client);
        return Err(ApiError::unauthorized());
    }
    state.limiter.record_success(&client);
    let (token, expires_at) = state.admin_tokens.issue(());
    Ok(Json(TokenResponse { token, expires_at }))
}

pub async fn logout(State(state): State<AppState>, _: Admin, headers: HeaderMap) -> StatusCode {
    if let Some(token) = bearer(&headers) {
        state.admin_tokens.revoke(token);
    }
    StatusCode::NO_CONTENT
}

/// Creation bodies may leave out server-assigned fields.
fn with_defaults(mut body: Value, defaults: &[(&str, Value)]) -> Result<Value, ApiError> {
    let obj = body
        .as_object_mut()
        .ok_or_else(|| ApiError::bad_request("body must be a JSON object"))?;
    for (k, v) in defaults {
        obj.entry(*k).or_insert_with(|| v.clone());
    }
    Ok(body)
}

fn decode<T: serde::de::DeserializeOwned>(body: Value) -> Result<T, ApiError> {
    serde_json::from_value(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

fn id_default() -> (&'static str, Value) {
    ("id", json!(uuid::Uuid::nil()))
}

// ---- agents --------------------------------------------------------------

pub async fn list_agents(State(s): State<AppState>, _: Admin) -> Json<Vec<AgentConfig>> {
    Json(s.platform.agents())
}

pub async fn get_agent(State(s): State<AppState>, _: Admin, ApiPath(id): ApiPath<AgentId>) -> Result<Json<AgentConfig>, ApiError> {
    Ok(Json(s.platform.agent(id)?))
}

pub async fn create_agent(
    State(s): State<AppState>,
    _: Admin,
    ApiJson(body): ApiJson<Value>,
) -> Result<(StatusCode, Json<AgentConfig>), ApiError> {
    let agent = decode(with_defaults(body, &[id_default()])?)?;
    Ok((StatusCode::CREATED, Json(s.platform.create_agent(agent)?)))
}

pub async fn update_agent(
    State(s): State<AppState>,
    _: Admin,
    ApiPath(id): ApiPath<AgentId>,
    ApiJson(body): ApiJson<Value>,
) -> Result<Json<AgentConfig>, ApiError> {
    let agent = decode(with_defaults(body, &[("id", json!(id))])?)?;
    Ok(Json(s.platform.update_agent(id, agent)?))
}

pub async fn delete_agent(State(s): State<AppState>, _: Admin, ApiPath(id): ApiPath<AgentId>) -> Result<StatusCode, ApiError> {
    s.platform.delete_agent(id)?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- forms ---------------------------------------------------------------

pub async fn list_forms(State(s): State<AppState>, _: Admin) -> Json<Vec<FormDefinition>> {
    Json(s.platform.forms())
}

pub async fn form_templates(State(s): State<AppState>, _: Admin) -> Json<Vec<FormDefinition>> {
    Json(s.platform.form_templates())
}

pub async fn get_form(State(s): State<AppState>, _: Admin, ApiPath(id): ApiPath<FormId>) -> Result<Json<FormDefinition>, ApiError> {
    Ok(Json(s.platform.form(id)?))
}

pub async fn create_form(
    State(s): State<AppState>,
    _: Admin,
    ApiJson(body): ApiJson<Value>,
) -> Result<(StatusCode, Json<FormDefinition>), ApiError> {
    let form = decode(with_defaults(body, &[id_default()])?)?;
    Ok((StatusCode::CREATED, Json(s.platform.create_form(form)?)))
}

pub async fn update_form(
    State(s): State<AppState>,
    _: Admin,
    ApiPath(id): ApiPath<FormId>,
    ApiJson(body): ApiJson<Value>,
) -> Result<Json<FormDefinition>, ApiError> {
    let form = decode(with_defaults(body, &[("id", json!(id))])?)?;
    Ok(Json(s.platform.update_form(id, form)?))
}

pub async fn delete_form(State(s): State<AppState>, _: Admin, ApiPath(id): ApiPath<FormId>) -> Result<StatusCode, ApiError> {
    s.platform.delete_form(id)?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- experiments ---------------------------------------------------------

#[derive(Serialize)]
pub struct ExperimentListItem {
    experiment: ExperimentConfig,
    summary: ExperimentSummary,
    address: String,
}

#[derive(Serialize)]
pub struct SavedExperiment {
    experiment: ExperimentConfig,
    warnings: Vec<Violation>,
    address: String,
}

fn experiment_defaults() -> [(&'static str, Value); 3] {
    [
        id_default(),
        ("status", json!(ExperimentStatus::Active)),
        ("launch_date", json!(Utc::now())),
    ]
}

pub async fn list_experiments(State(s): State<AppState>, _: Admin) -> Result<Json<Vec<ExperimentListItem>>, ApiError> {
    let items = s
        .platform
        .experiments()
        .into_iter()
        .map(|experiment| {
            Ok(ExperimentListItem {
                summary: s.platform.summary(experiment.id)?,
                address: s.address(experiment.id),
                experiment,
            })
        })
        .collect::<Result<_, ApiError>>()?;
    Ok(Json(items))
}

pub async fn get_experiment(
    State(s): State<AppState>,
    _: Admin,
    ApiPath(id): ApiPath<ExperimentId>,
) -> Result<Json<ExperimentConfig>, ApiError> {
    Ok(Json(s.platform.experiment(id)?))
}

pub async fn create_experiment(
    State(s): State<AppState>,
    _: Admin,
    ApiJson(body): ApiJson<Value>,
) -> Result<(StatusCode, Json<SavedExperiment>), ApiError> {
    let config = decode(with_defaults(body, &experiment_defaults())?)?;
    let (experiment, warnings) = s.platform.create_experiment(config)?;
    let address = s.address(experiment.id);
    Ok((StatusCode::CREATED, Json(SavedExperiment { experiment, warnings, address })))
}

pub async fn update_experiment(
    State(s): State<AppState>,
    _: Admin,
    ApiPath(id): ApiPath<ExperimentId>,
    ApiJson(body): ApiJson<Value>,
) -> Result<Json<SavedExperiment>, ApiError> {
    let config = decode(with_defaults(body, &experiment_defaults())?)?;
    let (experiment, warnings) = s.platform.update_experiment(id, config)?;
    let address = s.address(experiment.id);
    Ok(Json(SavedExperiment { experiment, warnings, address }))
}

#[derive(Deserialize)]
pub struct StatusRequest {
    status: ExperimentStatus,
}

pub async fn set_status(
    State(s): State<AppState>,
    _: Admin,
    ApiPath(id): ApiPath<ExperimentId>,
    ApiJson(req): ApiJson<StatusRequest>,
) -> Result<Json<ExperimentConfig>, ApiError> {
    Ok(Json(s.platform.set_status(id, req.status)?))
}

pub async fn summary(
    State(s): State<AppState>,
    _: Admin,
    ApiPath(id): ApiPath<ExperimentId>,
) -> Result<Json<ExperimentSummary>, ApiError> {
    Ok(Json(s.platform.summary(id)?))
}

pub async fn address(State(s): State<AppState>, _: Admin, ApiPath(id): ApiPath<ExperimentId>) -> Result<Json<Value>, ApiError> {
    s.platform.experiment(id)?;
    let slug = slug(id);
    Ok(Json(json!({
        "slug": slug,
        "path": format!("/e/{slug}"),
        "url": s.address(id),
    })))
}

#[derive(Deserialize)]
pub struct ExportQuery {
    #[serde(default = "json_format")]
    format: ExportFormat,
    table: Option<String>,
}

fn json_format() -> ExportFormat {
    ExportFormat::Json
}

fn attachment(content_type: &'static str, file_name: String, body: String) -> Response {
    (
        [
            (header::CONTENT_TYPE, content_type.to_owned()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{file_name}\"")),
        ],
        body,
    )
        .into_response()
}

/// Works in every experiment status.
pub async fn export(
    State(s): State<AppState>,
    _: Admin,
    ApiPath(id): ApiPath<ExperimentId>,
    ApiQuery(q): ApiQuery<ExportQuery>,
) -> Result<Response, ApiError> {
    let bundle = s.platform.export(id)?;
    let internal = |e: parley_core::export::ExportError| ApiError::from(parley_core::PlatformError::from(e));
    match q.format {
        ExportFormat::Json => Ok(attachment(
            "application/json",
            json_file_name(id),
            bundle.to_json().map_err(internal)?,
        )),
        ExportFormat::Csv => {
            let tables: Vec<&str> = Table::ALL.iter().map(|t| t.as_str()).collect();
            let table: Table = q
                .table
                .as_deref()
                .ok_or_else(|| ApiError::bad_request(format!("csv export needs table= one of {tables:?}")))?
                .parse()
                .map_err(ApiError::bad_request)?;
            Ok(attachment(
                "text/csv; charset=utf-8",
                table.file_name(id),
                bundle.to_csv(table).map_err(internal)?,
            ))
        }
    }
}

pub async fn import_experiment(State(s): State<AppState>, _: Admin, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body must be UTF-8"))?;
    let bundle = ExportBundle::from_json(text).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = s.platform.import(&bundle)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"experiment_id": id, "address": s.address(id)})),
    ))
}
