//! Thin JSON client for the participant and admin APIs.

use futures::StreamExt;
use reqwest::{header, Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use parley_core::platform::{ConversationView, FinishOutcome, PublicInfo, SendOutcome};
use parley_core::sse::SseDecoder;
use parley_core::{Answers, ExperimentId, MessageId, MessageRecord, SessionId};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The server answered with an error body.
    #[error("{status} {code}: {message}")]
    Api { status: StatusCode, code: String, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Short label used when tallying rejections.
    pub fn code(&self) -> &str {
        match self {
            ClientError::Api { code, .. } => code,
            ClientError::Transport(_) => "transport",
            ClientError::Protocol(_) => "protocol",
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(default)]
    message: String,
}

#[derive(Deserialize)]
struct TokenBody {
    token: String,
}

async fn check(res: reqwest::Response) -> Result<reqwest::Response> {
    let status = res.status();
    if status.is_success() {
        return Ok(res);
    }
    let text = res.text().await.unwrap_or_default();
    let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
        Ok(b) => (b.error, b.message),
        Err(_) => (format!("http_{}", status.as_u16()), text),
    };
    Err(ClientError::Api { status, code, message })
}

async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
    Ok(check(req.send().await?).await?.json().await?)
}

/// One participant's view of one experiment.
#[derive(Clone)]
pub struct ParticipantClient {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl ParticipantClient {
    pub fn new(http: reqwest::Client, base_url: &str, slug: &str) -> Self {
        Self {
            http,
            base: format!("{}/api/e/{slug}", base_url.trim_end_matches('/')),
            token: None,
        }
    }

    fn req(&self, method: Method, path: &str) -> RequestBuilder {
        let r = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => r.bearer_auth(t),
            None => r,
        }
    }

    pub async fn info(&self) -> Result<PublicInfo> {
        json(self.req(Method::GET, "")).await
    }

    pub async fn register(&mut self, username: &str, age: Option<u32>, gender: Option<&str>, answers: Option<Answers>) -> Result<()> {
        let body = json!({"username": username, "age": age, "gender": gender, "answers": answers.unwrap_or_default()});
        let t: TokenBody = json(self.req(Method::POST, "/register").json(&body)).await?;
        self.token = Some(t.token);
        Ok(())
    }

    pub async fn login(&mut self, username: &str) -> Result<()> {
        let t: TokenBody = json(self.req(Method::POST, "/login").json(&json!({"username": username}))).await?;
        self.token = Some(t.token);
        Ok(())
    }

    pub async fn start(&self, answers: Option<Answers>) -> Result<ConversationView> {
        json(self.req(Method::POST, "/conversations").json(&json!({"answers": answers}))).await
    }

    pub async fn conversation(&self, sid: SessionId) -> Result<ConversationView> {
        json(self.req(Method::GET, &format!("/conversations/{sid}"))).await
    }

    pub async fn send(&self, sid: SessionId, text: &str) -> Result<SendOutcome> {
        json(self.req(Method::POST, &format!("/conversations/{sid}/messages")).json(&json!({"text": text}))).await
    }

    /// Sends with `Accept: text/event-stream`. Returns the deltas as they
    /// arrived and the final outcome. Falls back to plain JSON when the
    /// experiment does not stream.
    pub async fn send_streaming(&self, sid: SessionId, text: &str) -> Result<(Vec<String>, SendOutcome)> {
        let res = self
            .req(Method::POST, &format!("/conversations/{sid}/messages"))
            .header(header::ACCEPT, "text/event-stream")
            .json(&json!({"text": text}))
            .send()
            .await?;
        let res = check(res).await?;
        let is_sse = res
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("text/event-stream"));
        if !is_sse {
            return Ok((Vec::new(), res.json().await?));
        }
        let mut decoder = SseDecoder::new();
        let mut deltas = Vec::new();
        let mut body = res.bytes_stream();
        let mut events = Vec::new();
        while let Some(chunk) = body.next().await {
            events.extend(decoder.push(&chunk?));
        }
        events.extend(decoder.finish());
        for ev in events {
            let data: Value = serde_json::from_str(&ev.data).map_err(|e| ClientError::Protocol(format!("bad event data: {e}")))?;
            match ev.event.as_deref() {
                Some("delta") => deltas.push(data["delta"].as_str().unwrap_or_default().to_owned()),
                Some("done") => {
                    let outcome = serde_json::from_value(data).map_err(|e| ClientError::Protocol(e.to_string()))?;
                    return Ok((deltas, outcome));
                }
                Some("error") => {
                    return Err(ClientError::Api {
                        status: StatusCode::OK,
                        code: data["error"].as_str().unwrap_or("error").to_owned(),
                        message: data["message"].as_str().unwrap_or_default().to_owned(),
                    })
                }
                _ => {}
            }
        }
        Err(ClientError::Protocol("stream ended without a done event".into()))
    }

    pub async fn annotate(&self, mid: MessageId, value: i64) -> Result<MessageRecord> {
        json(self.req(Method::POST, &format!("/messages/{mid}/annotation")).json(&json!({"value": value}))).await
    }

    pub async fn finish(&self, sid: SessionId, answers: Option<Answers>) -> Result<FinishOutcome> {
        json(self.req(Method::POST, &format!("/conversations/{sid}/finish")).json(&json!({"answers": answers}))).await
    }
}

/// Just enough of the admin API to fetch exports.
#[derive(Clone)]
pub struct AdminClient {
    http: reqwest::Client,
    base: String,
    token: String,
}

impl AdminClient {
    pub async fn login(http: reqwest::Client, base_url: &str, username: &str, password: &str) -> Result<Self> {
        let base = format!("{}/api/admin", base_url.trim_end_matches('/'));
        let t: TokenBody = json(
            http.post(format!("{base}/login"))
                .json(&json!({"username": username, "password": password})),
        )
        .await?;
        Ok(Self { http, base, token: t.token })
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    /// The JSON export, verbatim.
    pub async fn export_json(&self, id: ExperimentId) -> Result<String> {
        let res = self
            .http
            .get(format!("{}/experiments/{id}/export", self.base))
            .bearer_auth(&self.token)
            .send()
            .await?;
        Ok(check(res).await?.text().await?)
    }

    pub async fn export_csv(&self, id: ExperimentId, table: &str) -> Result<String> {
        let res = self
            .http
            .get(format!("{}/experiments/{id}/export?format=csv&table={table}", self.base))
            .bearer_auth(&self.token)
            .send()
            .await?;
        Ok(check(res).await?.text().await?)
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> Result<Value> {
        let mut req = self.http.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let res = check(req.send().await?).await?;
        if res.status() == StatusCode::NO_CONTENT {
            return Ok(Value::Null);
        }
        Ok(res.json().await?)
    }
}
