use std::collections::HashMap;
use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::Json;
use futures::future::BoxFuture;
use futures::{stream, FutureExt, StreamExt};
use serde::Deserialize;
use tokio::sync::mpsc;

use parley_core::agent::StreamChunk;
use parley_core::platform::{
    ConversationView, FinishOutcome, ParticipantView, PublicInfo, Registration, SendOutcome,
};
use parley_core::{Answers, ExperimentConfig, ExperimentId, MessageId, MessageRecord, PlatformError, SessionId};

use super::admin::TokenResponse;
use super::{bearer, optional_body, ApiJson, ApiPath};
use crate::auth::ParticipantClaims;
use crate::error::ApiError;
use crate::{parse_slug, AppState};

/// Resolves a slug to an active experiment. Runs before any token check,
/// so a closed study answers "inactive" on every endpoint.
fn active_experiment(state: &AppState, slug: &str) -> Result<ExperimentConfig, ApiError> {
    let id = parse_slug(slug).ok_or_else(|| ApiError::not_found("experiment"))?;
    let config = state
        .platform
        .experiment(id)
        .map_err(|_| ApiError::not_found("experiment"))?;
    if !config.is_active() {
        return Err(PlatformError::Inactive.into());
    }
    Ok(config)
}

/// A participant authenticated for the experiment named in the path.
pub struct Participant {
    experiment: ExperimentConfig,
    username: String,
}

impl Participant {
    fn id(&self) -> ExperimentId {
        self.experiment.id
    }
}

impl FromRequestParts<AppState> for Participant {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let ApiPath(params) = ApiPath::<HashMap<String, String>>::from_request_parts(parts, state).await?;
        let slug = params.get("slug").map(String::as_str).unwrap_or_default();
        let experiment = active_experiment(state, slug)?;
        let token = bearer(&parts.headers).ok_or_else(ApiError::unauthorized)?;
        let claims = state.participant_tokens.get(token).ok_or_else(ApiError::unauthorized)?;
        if claims.experiment_id != experiment.id {
            return Err(PlatformError::Forbidden("experiment").into());
        }
        Ok(Participant {
            experiment,
            username: claims.username,
        })
    }
}

fn issue(state: &AppState, experiment_id: ExperimentId, username: &str) -> TokenResponse {
    let (token, expires_at) = state.participant_tokens.issue(ParticipantClaims {
        experiment_id,
        username: username.to_owned(),
    });
    TokenResponse { token, expires_at }
}

pub async fn info(State(s): State<AppState>, ApiPath(slug): ApiPath<String>) -> Result<Json<PublicInfo>, ApiError> {
    let config = active_experiment(&s, &slug)?;
    Ok(Json(s.platform.public_info(config.id)?))
}

pub async fn register(
    State(s): State<AppState>,
    ApiPath(slug): ApiPath<String>,
    ApiJson(registration): ApiJson<Registration>,
) -> Result<(StatusCode, Json<TokenResponse>), ApiError> {
    let config = active_experiment(&s, &slug)?;
    let username = registration.username.trim().to_owned();
    s.platform.register(config.id, registration)?;
    Ok((StatusCode::CREATED, Json(issue(&s, config.id, &username))))
}

#[derive(Deserialize)]
pub struct LoginRequest {
    username: String,
}

pub async fn login(
    State(s): State<AppState>,
    ApiPath(slug): ApiPath<String>,
    ApiJson(req): ApiJson<LoginRequest>,
) -> Result<Json<TokenResponse>, ApiError> {
    let config = active_experiment(&s, &slug)?;
    let username = req.username.trim();
    s.platform.login(config.id, username)?;
    Ok(Json(issue(&s, config.id, username)))
}

pub async fn me(State(s): State<AppState>, p: Participant) -> Result<Json<ParticipantView>, ApiError> {
    Ok(Json(s.platform.participant_view(p.id(), &p.username)?))
}

#[derive(Deserialize, Default)]
pub struct AnswersBody {
    #[serde(default)]
    answers: Option<Answers>,
}

pub async fn start(State(s): State<AppState>, p: Participant, body: Bytes) -> Result<(StatusCode, Json<ConversationView>), ApiError> {
    let body: AnswersBody = optional_body(&body)?;
    let view = s.platform.start_conversation(p.id(), &p.username, body.answers)?;
    Ok((StatusCode::CREATED, Json(view)))
}

pub async fn conversation(
    State(s): State<AppState>,
    p: Participant,
    ApiPath((_, sid)): ApiPath<(String, SessionId)>,
) -> Result<Json<ConversationView>, ApiError> {
    Ok(Json(s.platform.conversation(p.id(), &p.username, sid)?))
}

#[derive(Deserialize)]
pub struct SendRequest {
    text: String,
}

fn wants_stream(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

/// Replies as JSON, or as server-sent events when the experiment streams
/// and the client accepts `text/event-stream`: `delta` events carrying
/// `{"delta": text}`, then one `done` event with the full outcome (or one
/// `error` event).
pub async fn send(
    State(s): State<AppState>,
    p: Participant,
    headers: HeaderMap,
    ApiPath((_, sid)): ApiPath<(String, SessionId)>,
    ApiJson(req): ApiJson<SendRequest>,
) -> Result<Response, ApiError> {
    let stream = p.experiment.features.stream_message && wants_stream(&headers);
    let (tx, mut rx) = mpsc::unbounded_channel::<StreamChunk>();
    let platform = s.platform.clone();
    let (id, username) = (p.id(), p.username);
    // generation runs detached, so a client that disconnects mid-stream
    // still leaves a complete exchange behind
    let mut task = tokio::spawn(async move {
        let mut sink = tx;
        let sink: Option<&mut dyn parley_core::agent::ChunkSink> = if stream { Some(&mut sink) } else { None };
        platform.send_message(id, &username, sid, &req.text, sink).await
    });
    let joined = |r: Result<Result<SendOutcome, PlatformError>, tokio::task::JoinError>| match r {
        Ok(outcome) => outcome.map_err(ApiError::from),
        Err(e) => {
            tracing::error!(error = %e, "generation task failed");
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "generation failed"))
        }
    };

    if !stream {
        return Ok(Json(joined(task.await)?).into_response());
    }

    // errors raised before the first delta still get a proper status code
    let first = tokio::select! {
        chunk = rx.recv() => chunk,
        done = &mut task => {
            let outcome = joined(done)?;
            return finish_stream(None, rx, async move { Ok(outcome) }.boxed());
        }
    };
    match first {
        Some(chunk) => finish_stream(Some(chunk), rx, async move { joined(task.await) }.boxed()),
        None => {
            let outcome = joined(task.await)?;
            finish_stream(None, rx, async move { Ok(outcome) }.boxed())
        }
    }
}

fn finish_stream(
    first: Option<StreamChunk>,
    rx: mpsc::UnboundedReceiver<StreamChunk>,
    outcome: BoxFuture<'static, Result<SendOutcome, ApiError>>,
) -> Result<Response, ApiError> {
    let rest = stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|c| (c, rx)) });
    let deltas = stream::iter(first)
        .chain(rest)
        .filter(|c| futures::future::ready(!c.terminal && !c.delta.is_empty()))
        .map(|c| Event::default().event("delta").json_data(serde_json::json!({"delta": c.delta})));
    let last = stream::once(outcome.map(|o| match o {
        Ok(outcome) => Event::default().event("done").json_data(outcome),
        Err(e) => Event::default().event("error").json_data(e.body_json()),
    }));
    let events = deltas.chain(last).map(|e| {
        Ok::<_, Infallible>(e.unwrap_or_else(|_| Event::default().event("error").data("{}")))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

#[derive(Deserialize)]
pub struct AnnotationRequest {
    value: i64,
}

pub async fn annotate(
    State(s): State<AppState>,
    p: Participant,
    ApiPath((_, mid)): ApiPath<(String, MessageId)>,
    ApiJson(req): ApiJson<AnnotationRequest>,
) -> Result<Json<MessageRecord>, ApiError> {
    Ok(Json(s.platform.annotate(p.id(), &p.username, mid, req.value)?))
}

pub async fn finish(
    State(s): State<AppState>,
    p: Participant,
    ApiPath((_, sid)): ApiPath<(String, SessionId)>,
    body: Bytes,
) -> Result<Json<FinishOutcome>, ApiError> {
    let body: AnswersBody = optional_body(&body)?;
    Ok(Json(s.platform.finish_conversation(p.id(), &p.username, sid, body.answers)?))
}
