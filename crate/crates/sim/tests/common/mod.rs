#![allow(dead_code)]

use std::sync::Arc;

use reqwest::Method;
use serde_json::{json, Value};

use parley_core::agent::RetryPolicy;
use parley_core::provider::mock::MockProvider;
use parley_core::{ExperimentId, Platform, Store};
use parley_server::auth::AdminCredentials;
use parley_server::{router, AppState, Settings};
use parley_sim::AdminClient;

pub const PASSWORD: &str = "sim-admin-password";

/// A real server on a loopback port, backed by the mock provider.
pub struct Server {
    pub base_url: String,
    pub state: AppState,
    pub provider: Arc<MockProvider>,
    pub http: reqwest::Client,
    pub admin: AdminClient,
}

impl Server {
    pub async fn start(provider: MockProvider, seed: u64) -> Self {
        let provider = Arc::new(provider);
        let platform = Platform::new(Store::in_memory(), provider.clone(), seed).with_retry_policy(RetryPolicy::immediate());
        let state = AppState::new(
            Arc::new(platform),
            AdminCredentials::from_password("admin", PASSWORD),
            Settings::default(),
        );
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let app = router(state.clone());
        tokio::spawn(async move {
            axum::serve(listener, app.into_make_service_with_connect_info::<std::net::SocketAddr>())
                .await
                .unwrap();
        });
        let http = reqwest::Client::builder().pool_max_idle_per_host(64).build().unwrap();
        let admin = AdminClient::login(http.clone(), &base_url, "admin", PASSWORD).await.unwrap();
        Self {
            base_url,
            state,
            provider,
            http,
            admin,
        }
    }

    pub async fn echo(seed: u64) -> Self {
        Self::start(MockProvider::echo(), seed).await
    }

    pub async fn agent(&self, title: &str) -> String {
        let body = json!({
            "title": title,
            "model_id": "mock-1",
            "first_chat_sentence": format!("Hi, I am {title}."),
            "system_starter_prompt": format!("You are {title}."),
            "before_user_sentence_prompt": "<<BEFORE>>",
            "after_user_sentence_prompt": "<<AFTER>>",
        });
        self.admin.call(Method::POST, "/agents", Some(body)).await.unwrap()["id"]
            .as_str()
            .unwrap()
            .to_owned()
    }

    pub async fn form(&self, body: Value) -> String {
        self.admin.call(Method::POST, "/forms", Some(body)).await.unwrap()["id"]
            .as_str()
            .unwrap()
            .to_owned()
    }

    /// Creates an experiment over two fresh agents with the given weights;
    /// `extra` is merged into the body. Returns (id, slug).
    pub async fn experiment(&self, weights: (u8, u8), extra: Value) -> (ExperimentId, String) {
        let a = self.agent("Agent one").await;
        let b = self.agent("Agent two").await;
        let mut body = json!({
            "title": "Simulated study",
            "agents": [{"agent_id": a, "weight_percent": weights.0}, {"agent_id": b, "weight_percent": weights.1}],
        });
        if let (Some(t), Value::Object(e)) = (body.as_object_mut(), extra) {
            t.extend(e);
        }
        let saved = self.admin.call(Method::POST, "/experiments", Some(body)).await.unwrap();
        let id: ExperimentId = saved["experiment"]["id"].as_str().unwrap().parse().unwrap();
        (id, id.slug())
    }

    /// Like [`Server::experiment`] but under a chosen id, so that keyed
    /// allocation is reproducible run to run. The experiment is built on a
    /// scratch server and imported here.
    pub async fn experiment_with_id(&self, id: ExperimentId, weights: (u8, u8), extra: Value) -> String {
        let scratch = Server::echo(0).await;
        let (temp, _) = scratch.experiment(weights, extra).await;
        let bundle = scratch.admin.export_json(temp).await.unwrap().replace(&temp.to_string(), &id.to_string());
        self.admin
            .call(Method::POST, "/experiments/import", Some(serde_json::from_str(&bundle).unwrap()))
            .await
            .unwrap();
        id.slug()
    }

    pub async fn set_status(&self, id: ExperimentId, status: &str) {
        self.admin
            .call(Method::PUT, &format!("/experiments/{id}/status"), Some(json!({"status": status})))
            .await
            .unwrap();
    }
}

/// A five-point mood form with `n` items keyed mood1..moodN.
pub fn mood_form(name: &str, n: usize) -> Value {
    let questions: Vec<Value> = (1..=n)
        .map(|i| json!({"key": format!("mood{i}"), "text": format!("Mood item {i}"), "kind": "scale", "min": 1, "max": 5, "required": true}))
        .collect();
    json!({"name": name, "questions": questions})
}

pub fn script(json: Value) -> parley_sim::ParticipantScript {
    serde_json::from_value(json).unwrap()
}
