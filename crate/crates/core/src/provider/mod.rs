//! Chat-completion providers.
//!
//! A provider answers a fully assembled [`ProviderRequest`]. Two
//! implementations ship: [`http::HttpChatProvider`] for any endpoint that
//! speaks the common chat-completions wire format, and [`mock::MockProvider`]
//! for offline runs and fault injection.

pub mod http;
pub mod mock;

use async_trait::async_trait;
use futures::stream::BoxStream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SamplingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub model_id: String,
    pub turns: Vec<Turn>,
    pub sampling: SamplingParams,
    #[serde(default)]
    pub stream: bool,
}

impl ProviderRequest {
    pub fn last_user_content(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Option<Usage>,
    /// Why the reply failed, when `finish_reason` is `Error`.
    #[serde(skip)]
    pub error: Option<ProviderError>,
}

impl ProviderReply {
    pub fn stop(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
            error: None,
        }
    }

    pub fn failed(content: impl Into<String>, error: ProviderError) -> Self {
        Self {
            content: content.into(),
            finish_reason: FinishReason::Error,
            usage: None,
            error: Some(error),
        }
    }
}

/// One increment of a streamed completion as produced by a provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamDelta {
    pub text: String,
    pub finish_reason: Option<FinishReason>,
}

impl StreamDelta {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: None,
        }
    }
}

pub type DeltaStream = BoxStream<'static, Result<StreamDelta, ProviderError>>;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider rejected credentials: {0}")]
    Unauthorized(String),
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider call timed out")]
    Timeout,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider refused the request: {0}")]
    Rejected(String),
    #[error("provider does not support streaming")]
    StreamingUnsupported,
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_) | ProviderError::Timeout)
    }
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError>;

    fn supports_streaming(&self) -> bool {
        false
    }

    async fn stream(&self, _request: &ProviderRequest) -> Result<DeltaStream, ProviderError> {
        Err(ProviderError::StreamingUnsupported)
    }
}
