//! In-process provider for offline runs and fault injection.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use parking_lot::Mutex;

use super::{ChatProvider, DeltaStream, FinishReason, ProviderError, ProviderReply, ProviderRequest, StreamDelta, Usage};

/// A failure injected into one provider call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    ConnectionRefused,
    Unauthorized,
    Malformed,
    /// Sleeps this long before answering (exercises caller timeouts).
    Delay(Duration),
    /// Streams this many chunks, then fails. Non-streaming calls fail outright.
    InterruptAfter(usize),
}

enum Source {
    /// Replies with the last user turn verbatim.
    Echo,
    /// Replies from a queue of pre-chunked completions, then echoes.
    Script(Mutex<VecDeque<Vec<String>>>),
}

pub struct MockProvider {
    source: Source,
    streaming: bool,
    chunk_chars: usize,
    finish_reason: FinishReason,
    faults: Mutex<VecDeque<Fault>>,
    calls: AtomicUsize,
    captured: Mutex<Vec<ProviderRequest>>,
}

fn chunk(content: &str, size: usize) -> Vec<String> {
    let chars: Vec<char> = content.chars().collect();
    chars.chunks(size.max(1)).map(|c| c.iter().collect()).collect()
}

impl MockProvider {
    fn with_source(source: Source) -> Self {
        Self {
            source,
            streaming: true,
            chunk_chars: 4,
            finish_reason: FinishReason::Stop,
            faults: Mutex::new(VecDeque::new()),
            calls: AtomicUsize::new(0),
            captured: Mutex::new(Vec::new()),
        }
    }

    pub fn echo() -> Self {
        Self::with_source(Source::Echo)
    }

    /// Replies with `replies` in order; streamed replies are split every
    /// few characters.
    pub fn scripted<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let me = Self::with_source(Source::Script(Mutex::new(VecDeque::new())));
        let queue: VecDeque<_> = replies
            .into_iter()
            .map(|r| chunk(&r.into(), me.chunk_chars))
            .collect();
        if let Source::Script(q) = &me.source {
            *q.lock() = queue;
        }
        me
    }

    /// Replies with explicitly chunked completions.
    pub fn scripted_chunks(replies: impl IntoIterator<Item = Vec<String>>) -> Self {
        Self::with_source(Source::Script(Mutex::new(replies.into_iter().collect())))
    }

    pub fn with_streaming(mut self, streaming: bool) -> Self {
        self.streaming = streaming;
        self
    }

    pub fn with_finish_reason(mut self, finish_reason: FinishReason) -> Self {
        self.finish_reason = finish_reason;
        self
    }

    /// Queues `count` copies of `fault` for the next calls.
    pub fn fail_next(&self, count: usize, fault: Fault) {
        let mut faults = self.faults.lock();
        faults.extend(std::iter::repeat_n(fault, count));
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn captured(&self) -> Vec<ProviderRequest> {
        self.captured.lock().clone()
    }

    fn begin(&self, request: &ProviderRequest) -> Option<Fault> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.captured.lock().push(request.clone());
        self.faults.lock().pop_front()
    }

    fn next_chunks(&self, request: &ProviderRequest) -> Vec<String> {
        let scripted = match &self.source {
            Source::Script(queue) => queue.lock().pop_front(),
            Source::Echo => None,
        };
        scripted.unwrap_or_else(|| chunk(request.last_user_content().unwrap_or_default(), self.chunk_chars))
    }

    fn usage(request: &ProviderRequest, content: &str) -> Usage {
        let words = |s: &str| s.split_whitespace().count() as u32;
        Usage {
            prompt_tokens: request.turns.iter().map(|t| words(&t.content)).sum(),
            completion_tokens: words(content),
        }
    }
}

async fn apply_fault(fault: &Fault) -> Result<(), ProviderError> {
    match fault {
        Fault::ConnectionRefused => Err(ProviderError::Transient("connection refused".into())),
        Fault::Unauthorized => Err(ProviderError::Unauthorized("invalid api key".into())),
        Fault::Malformed => Err(ProviderError::Malformed("missing choices".into())),
        Fault::Delay(d) => {
            tokio::time::sleep(*d).await;
            Ok(())
        }
        Fault::InterruptAfter(_) => Ok(()),
    }
}

#[async_trait]
impl ChatProvider for MockProvider {
    async fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        if let Some(fault) = self.begin(request) {
            if matches!(fault, Fault::InterruptAfter(_)) {
                return Err(ProviderError::Transient("connection reset".into()));
            }
            apply_fault(&fault).await?;
        }
        let content: String = self.next_chunks(request).concat();
        Ok(ProviderReply {
            usage: Some(Self::usage(request, &content)),
            content,
            finish_reason: self.finish_reason,
            error: None,
        })
    }

    fn supports_streaming(&self) -> bool {
        self.streaming
    }

    async fn stream(&self, request: &ProviderRequest) -> Result<DeltaStream, ProviderError> {
        if !self.streaming {
            return Err(ProviderError::StreamingUnsupported);
        }
        let fault = self.begin(request);
        let mut cut = None;
        if let Some(fault) = &fault {
            apply_fault(fault).await?;
            if let Fault::InterruptAfter(n) = fault {
                cut = Some(*n);
            }
        }
        let chunks = self.next_chunks(request);
        let finish = self.finish_reason;
        let items: Vec<Result<StreamDelta, ProviderError>> = match cut {
            Some(n) => chunks
                .into_iter()
                .take(n)
                .map(|c| Ok(StreamDelta::text(c)))
                .chain(std::iter::once(Err(ProviderError::Transient("stream interrupted".into()))))
                .collect(),
            None => chunks
                .into_iter()
                .map(|c| Ok(StreamDelta::text(c)))
                .chain(std::iter::once(Ok(StreamDelta {
                    text: String::new(),
                    finish_reason: Some(finish),
                })))
                .collect(),
        };
        Ok(stream::iter(items).boxed())
    }
}
