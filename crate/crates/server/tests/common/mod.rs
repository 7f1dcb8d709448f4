#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use parley_core::provider::mock::MockProvider;
use parley_core::{Platform, Store};
use parley_server::auth::AdminCredentials;
use parley_server::{router, AppState, Settings};

pub const ADMIN_USER: &str = "admin";
pub const ADMIN_PASSWORD: &str = "correct horse battery staple";

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn error_code(&self) -> String {
        self.json()["error"].as_str().unwrap_or_default().to_owned()
    }
}

pub struct TestApp {
    pub app: Router,
    pub state: AppState,
    pub provider: Arc<MockProvider>,
}

impl TestApp {
    pub fn new() -> Self {
        Self::with(MockProvider::echo(), Settings::default())
    }

    pub fn with(provider: MockProvider, settings: Settings) -> Self {
        let provider = Arc::new(provider);
        let platform = Platform::new(Store::in_memory(), provider.clone(), 7)
            .with_retry_policy(parley_core::agent::RetryPolicy::immediate());
        let creds = AdminCredentials::from_password(ADMIN_USER, ADMIN_PASSWORD);
        let state = AppState::new(Arc::new(platform), creds, settings);
        Self {
            app: router(state.clone()),
            state,
            provider,
        }
    }

    pub async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        self.call_with(method, uri, token, body, &[]).await
    }

    pub async fn call_with(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
        extra: &[(&str, &str)],
    ) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        for (k, v) in extra {
            req = req.header(*k, *v);
        }
        let req = match body {
            Some(b) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let headers = res.headers().clone();
        let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, headers, body }
    }

    pub async fn admin_token(&self) -> String {
        let r = self
            .call(
                Method::POST,
                "/api/admin/login",
                None,
                Some(json!({"username": ADMIN_USER, "password": ADMIN_PASSWORD})),
            )
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        r.json()["token"].as_str().unwrap().to_owned()
    }

    pub async fn create_agent(&self, admin: &str, title: &str) -> String {
        let r = self.call(Method::POST, "/api/admin/agents", Some(admin), Some(agent_body(title))).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
        r.json()["id"].as_str().unwrap().to_owned()
    }

    /// Creates an active experiment and returns (id, slug).
    pub async fn create_experiment(&self, admin: &str, body: Value) -> (String, String) {
        let r = self.call(Method::POST, "/api/admin/experiments", Some(admin), Some(body)).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
        let v = r.json();
        let id = v["experiment"]["id"].as_str().unwrap().to_owned();
        let slug = v["address"].as_str().unwrap().rsplit('/').next().unwrap().to_owned();
        (id, slug)
    }

    /// Admin login, two agents, one 50/50 experiment with the given extras merged in.
    pub async fn study(&self, extra: Value) -> Study {
        let admin = self.admin_token().await;
        let a = self.create_agent(&admin, "Formal helper").await;
        let b = self.create_agent(&admin, "Casual helper").await;
        let mut body = json!({
            "title": "Tone study",
            "description": "Talk to an assistant.",
            "agents": [{"agent_id": a, "weight_percent": 50}, {"agent_id": b, "weight_percent": 50}],
        });
        merge(&mut body, extra);
        let (id, slug) = self.create_experiment(&admin, body).await;
        Study { admin, id, slug, agents: [a, b] }
    }

    pub async fn register(&self, slug: &str, username: &str) -> String {
        let r = self
            .call(Method::POST, &format!("/api/e/{slug}/register"), None, Some(json!({"username": username})))
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
        r.json()["token"].as_str().unwrap().to_owned()
    }

    pub async fn start(&self, slug: &str, token: &str) -> Value {
        let r = self.call(Method::POST, &format!("/api/e/{slug}/conversations"), Some(token), None).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
        r.json()
    }

    pub async fn send(&self, slug: &str, token: &str, sid: &str, text: &str) -> Reply {
        self.call(
            Method::POST,
            &format!("/api/e/{slug}/conversations/{sid}/messages"),
            Some(token),
            Some(json!({"text": text})),
        )
        .await
    }
}

pub struct Study {
    pub admin: String,
    pub id: String,
    pub slug: String,
    pub agents: [String; 2],
}

pub fn agent_body(title: &str) -> Value {
    json!({
        "title": title,
        "description": format!("{title} (internal notes)"),
        "model_id": "mock-1",
        "first_chat_sentence": "Hello! How can I help?",
        "system_starter_prompt": "You are a helpful assistant.",
    })
}

pub fn merge(target: &mut Value, extra: Value) {
    if let (Some(t), Value::Object(e)) = (target.as_object_mut(), extra) {
        for (k, v) in e {
            t.insert(k, v);
        }
    }
}

/// Splits an SSE body into (event, data) pairs.
pub fn sse_events(body: &str) -> Vec<(String, Value)> {
    body.split("\n\n")
        .filter_map(|block| {
            let mut event = "message".to_owned();
            let mut data = String::new();
            for line in block.lines() {
                if let Some(e) = line.strip_prefix("event:") {
                    event = e.trim().to_owned();
                } else if let Some(d) = line.strip_prefix("data:") {
                    data.push_str(d.strip_prefix(' ').unwrap_or(d));
                }
            }
            (!data.is_empty()).then(|| (event, serde_json::from_str(&data).unwrap_or(Value::String(data))))
        })
        .collect()
}
