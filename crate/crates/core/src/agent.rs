//! Turns an agent configuration plus session history into provider
//! requests, and drives provider calls with retries and streaming.

use std::time::Duration;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use tokio::time::{sleep, timeout};

use crate::model::{AgentConfig, Author, Delivery, MessageRecord};
use crate::provider::{ChatProvider, FinishReason, ProviderError, ProviderReply, ProviderRequest, Role, Turn};

/// One piece of a streamed reply as delivered to the participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamChunk {
    pub delta: String,
    pub terminal: bool,
}

impl StreamChunk {
    pub fn delta(text: impl Into<String>) -> Self {
        Self {
            delta: text.into(),
            terminal: false,
        }
    }

    pub fn terminal() -> Self {
        Self {
            delta: String::new(),
            terminal: true,
        }
    }
}

/// Receives stream chunks in order.
pub trait ChunkSink: Send {
    fn emit(&mut self, chunk: StreamChunk);
}

impl ChunkSink for Vec<StreamChunk> {
    fn emit(&mut self, chunk: StreamChunk) {
        self.push(chunk);
    }
}

impl ChunkSink for tokio::sync::mpsc::UnboundedSender<StreamChunk> {
    fn emit(&mut self, chunk: StreamChunk) {
        // receiver gone means the client disconnected; the reply is still stored
        let _ = self.send(chunk);
    }
}

/// Discards chunks.
pub struct NullSink;

impl ChunkSink for NullSink {
    fn emit(&mut self, _chunk: StreamChunk) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the n-th retry; the last entry repeats.
    pub backoff: Vec<Duration>,
    pub call_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)],
            call_timeout: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// No backoff delays; used by tests and offline simulation.
    pub fn immediate() -> Self {
        Self {
            backoff: vec![Duration::ZERO],
            ..Self::default()
        }
    }

    fn delay(&self, retry: usize) -> Duration {
        self.backoff
            .get(retry)
            .or(self.backoff.last())
            .copied()
            .unwrap_or_default()
    }
}

/// The agent's opener. No provider call is involved.
pub fn first_message(agent: &AgentConfig) -> MessageRecord {
    MessageRecord::draft(Author::Agent, agent.first_chat_sentence.clone())
}

/// Surrounds the participant's text with the agent's before/after prompts,
/// newline-separated, skipping empty parts.
pub fn wrap_user_text(agent: &AgentConfig, text: &str) -> String {
    [
        agent.before_user_sentence_prompt.as_str(),
        text,
        agent.after_user_sentence_prompt.as_str(),
    ]
    .iter()
    .enumerate()
    .filter(|(i, part)| *i == 1 || !part.is_empty())
    .map(|(_, part)| *part)
    .collect::<Vec<_>>()
    .join("\n")
}

/// The part of a session's history that is sent to the provider. A user
/// turn answered only by an error notice is dropped together with the
/// notice: the model never replied to it, and alternation is preserved.
pub fn provider_history(messages: &[MessageRecord]) -> Vec<MessageRecord> {
    let mut out: Vec<MessageRecord> = Vec::with_capacity(messages.len());
    for m in messages {
        if m.delivery == Delivery::Error {
            if out.last().is_some_and(|prev| prev.author == Author::User) {
                out.pop();
            }
        } else {
            out.push(m.clone());
        }
    }
    out
}

/// `[system] ++ history ++ [user]`, with every user turn wrapped.
pub fn assemble_request(agent: &AgentConfig, history: &[MessageRecord], user_text: &str) -> ProviderRequest {
    let mut turns = Vec::with_capacity(history.len() + 2);
    turns.push(Turn::new(Role::System, agent.system_starter_prompt.clone()));
    for message in history {
        turns.push(match message.author {
            Author::Agent => Turn::new(Role::Assistant, message.text.clone()),
            Author::User => Turn::new(Role::User, wrap_user_text(agent, &message.text)),
        });
    }
    turns.push(Turn::new(Role::User, wrap_user_text(agent, user_text)));
    ProviderRequest {
        model_id: agent.model_id.clone(),
        turns,
        sampling: agent.sampling.clone(),
        stream: false,
    }
}

fn finalize(reply: ProviderReply) -> ProviderReply {
    if reply.finish_reason == FinishReason::Stop && reply.content.is_empty() {
        ProviderReply::failed("", ProviderError::Malformed("empty completion".into()))
    } else {
        reply
    }
}

/// Calls `op` up to `policy.max_attempts` times, retrying transient
/// failures and timeouts with backoff.
async fn with_retries<T, F, Fut>(policy: &RetryPolicy, mut op: F) -> Result<T, ProviderError>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Result<T, ProviderError>>,
{
    let mut last = ProviderError::Transient("no attempts made".into());
    for attempt in 0..policy.max_attempts.max(1) as usize {
        if attempt > 0 {
            sleep(policy.delay(attempt - 1)).await;
        }
        let outcome = match timeout(policy.call_timeout, op()).await {
            Ok(r) => r,
            Err(_) => Err(ProviderError::Timeout),
        };
        match outcome {
            Ok(value) => return Ok(value),
            Err(e) if e.is_retryable() => {
                tracing::warn!(attempt = attempt + 1, error = %e, "provider call failed");
                last = e;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Non-streaming completion. Never fails: errors surface as
/// `finish_reason = Error` with the cause in `error`.
pub async fn generate_reply(request: &ProviderRequest, provider: &dyn ChatProvider, policy: &RetryPolicy) -> ProviderReply {
    match with_retries(policy, || provider.complete(request)).await {
        Ok(reply) => finalize(reply),
        Err(e) => ProviderReply::failed("", e),
    }
}

/// Streams a completion into `sink` and returns the assembled reply. The
/// last chunk emitted is always the single terminal chunk. Providers
/// without streaming fall back to [`generate_reply`], delivered as one delta.
pub async fn stream_reply(
    request: &ProviderRequest,
    provider: &dyn ChatProvider,
    policy: &RetryPolicy,
    sink: &mut dyn ChunkSink,
) -> ProviderReply {
    if !provider.supports_streaming() {
        let reply = generate_reply(request, provider, policy).await;
        if !reply.content.is_empty() {
            sink.emit(StreamChunk::delta(reply.content.clone()));
        }
        sink.emit(StreamChunk::terminal());
        return reply;
    }

    let mut request = request.clone();
    request.stream = true;
    let mut deltas = match with_retries(policy, || provider.stream(&request)).await {
        Ok(s) => s,
        Err(e) => {
            sink.emit(StreamChunk::terminal());
            return ProviderReply::failed("", e);
        }
    };

    let mut content = String::new();
    let mut finish_reason = FinishReason::Stop;
    loop {
        let next = match timeout(policy.call_timeout, deltas.next()).await {
            Ok(next) => next,
            Err(_) => Some(Err(ProviderError::Timeout)),
        };
        match next {
            None => break,
            Some(Ok(delta)) => {
                if !delta.text.is_empty() {
                    content.push_str(&delta.text);
                    sink.emit(StreamChunk::delta(delta.text));
                }
                if let Some(reason) = delta.finish_reason {
                    finish_reason = reason;
                }
            }
            Some(Err(e)) => {
                tracing::warn!(error = %e, received = content.len(), "stream interrupted");
                sink.emit(StreamChunk::terminal());
                return ProviderReply::failed(content, e);
            }
        }
    }
    sink.emit(StreamChunk::terminal());
    finalize(ProviderReply {
        content,
        finish_reason,
        usage: None,
        error: None,
    })
}
