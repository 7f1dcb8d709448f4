//! Client for the common chat-completions wire format.
//!
//! Request: `POST {base_url}/chat/completions` with `model`, `messages`,
//! sampling fields and `stream`. Non-streaming replies are read from
//! `choices[0].message.content`; streaming replies arrive as server-sent
//! events carrying `choices[0].delta.content`, terminated by `data: [DONE]`.

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, DeltaStream, FinishReason, ProviderError, ProviderReply, ProviderRequest, StreamDelta, Turn, Usage};
use crate::sse::SseDecoder;

pub const DONE_MARKER: &str = "[DONE]";

#[derive(Debug, Serialize)]
pub struct WireRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [Turn],
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    pub stop: &'a [String],
    pub stream: bool,
}

impl<'a> WireRequest<'a> {
    pub fn new(request: &'a ProviderRequest, stream: bool) -> Self {
        let s = &request.sampling;
        Self {
            model: &request.model_id,
            messages: &request.turns,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
            top_p: s.top_p,
            frequency_penalty: s.frequency_penalty,
            presence_penalty: s.presence_penalty,
            stop: &s.stop_sequences,
            stream,
        }
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    #[serde(default)]
    message: Option<WireMessage>,
    #[serde(default)]
    delta: Option<WireMessage>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

fn finish_reason(raw: Option<&str>) -> FinishReason {
    match raw {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Stop,
    }
}

fn parse_reply(body: &str) -> Result<ProviderReply, ProviderError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::Malformed("response has no choices".into()))?;
    let content = choice
        .message
        .and_then(|m| m.content)
        .ok_or_else(|| ProviderError::Malformed("choices[0].message.content missing".into()))?;
    Ok(ProviderReply {
        content,
        finish_reason: finish_reason(choice.finish_reason.as_deref()),
        usage: wire.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
        error: None,
    })
}

/// Parses one streamed `data:` payload. `Ok(None)` marks the end of stream.
fn parse_delta(data: &str) -> Result<Option<StreamDelta>, ProviderError> {
    if data.trim() == DONE_MARKER {
        return Ok(None);
    }
    let wire: WireResponse =
        serde_json::from_str(data).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let Some(choice) = wire.choices.into_iter().next() else {
        // usage-only trailer chunks carry no choices
        return Ok(Some(StreamDelta::text("")));
    };
    Ok(Some(StreamDelta {
        text: choice.delta.and_then(|d| d.content).unwrap_or_default(),
        finish_reason: choice.finish_reason.as_deref().map(|r| finish_reason(Some(r))),
    }))
}

fn status_error(status: StatusCode, body: String) -> ProviderError {
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => ProviderError::Unauthorized(body),
        StatusCode::TOO_MANY_REQUESTS | StatusCode::REQUEST_TIMEOUT => {
            ProviderError::Transient(format!("{status}: {body}"))
        }
        s if s.is_server_error() => ProviderError::Transient(format!("{status}: {body}")),
        s => ProviderError::Rejected(format!("{s}: {body}")),
    }
}

fn transport_error(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else {
        ProviderError::Transient(e.to_string())
    }
}

#[derive(Clone)]
pub struct HttpChatProvider {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::Client,
}

impl HttpChatProvider {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key,
            client: reqwest::Client::new(),
        }
    }

    async fn send(&self, request: &ProviderRequest, stream: bool) -> Result<reqwest::Response, ProviderError> {
        let mut builder = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&WireRequest::new(request, stream));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(transport_error)?;
        let status = response.status();
        if status.is_success() {
            Ok(response)
        } else {
            let body = response.text().await.unwrap_or_default();
            Err(status_error(status, body))
        }
    }
}

impl std::fmt::Debug for HttpChatProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatProvider")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[async_trait]
impl ChatProvider for HttpChatProvider {
    async fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        let response = self.send(request, false).await?;
        let body = response.text().await.map_err(transport_error)?;
        parse_reply(&body)
    }

    fn supports_streaming(&self) -> bool {
        true
    }

    async fn stream(&self, request: &ProviderRequest) -> Result<DeltaStream, ProviderError> {
        let response = self.send(request, true).await?;
        let mut decoder = SseDecoder::new();
        let deltas = response
            .bytes_stream()
            .map(move |chunk| match chunk {
                Ok(bytes) => decoder
                    .push(&bytes)
                    .into_iter()
                    .map(|event| parse_delta(&event.data))
                    .collect::<Vec<_>>(),
                Err(e) => vec![Err(transport_error(e))],
            })
            .flat_map(stream::iter)
            .chain(stream::once(async {
                Err(ProviderError::Transient("stream ended without done marker".into()))
            }))
            .scan(false, |failed, item| {
                let out = match item {
                    _ if *failed => None,
                    Ok(None) => None,
                    Ok(Some(delta)) => Some(Ok(delta)),
                    Err(e) => {
                        *failed = true;
                        Some(Err(e))
                    }
                };
                futures::future::ready(out)
            });
        Ok(deltas.boxed())
    }
}
