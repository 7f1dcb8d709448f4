//! HTTP service: the admin API under `/api/admin`, the participant API
//! under `/api/e/{slug}`, the experiment address page `/e/{slug}`, and the
//! optional static web client.

pub mod auth;
pub mod config;
pub mod error;
mod routes;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use parley_core::{ExperimentId, Platform};

use auth::{AdminCredentials, LoginLimiter, ParticipantClaims, RateLimit, TokenStore};

pub use routes::router;

/// Machine-readable description of every endpoint.
pub const OPENAPI: &str = include_str!("../openapi.json");

/// URL-safe identifier of an experiment: unpadded base64url of its id.
pub fn slug(id: ExperimentId) -> String {
    id.slug()
}

pub fn parse_slug(slug: &str) -> Option<ExperimentId> {
    ExperimentId::from_slug(slug)
}

#[derive(Debug, Clone)]
pub struct Settings {
    /// Prefix for experiment addresses, e.g. `https://study.example.org`.
    pub public_base_url: String,
    pub admin_token_ttl: Duration,
    pub participant_token_ttl: Duration,
    pub login_limit: RateLimit,
    pub static_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            public_base_url: "http://localhost:8080".into(),
            admin_token_ttl: Duration::from_secs(8 * 3600),
            participant_token_ttl: Duration::from_secs(12 * 3600),
            login_limit: RateLimit::default(),
            static_dir: None,
        }
    }
}

pub struct Inner {
    pub platform: Arc<Platform>,
    pub settings: Settings,
    admin: AdminCredentials,
    admin_tokens: TokenStore<()>,
    participant_tokens: TokenStore<ParticipantClaims>,
    limiter: LoginLimiter,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;

    fn deref(&self) -> &Inner {
        &self.0
    }
}

impl AppState {
    pub fn new(platform: Arc<Platform>, admin: AdminCredentials, settings: Settings) -> Self {
        Self(Arc::new(Inner {
            platform,
            admin_tokens: TokenStore::new(settings.admin_token_ttl),
            participant_tokens: TokenStore::new(settings.participant_token_ttl),
            limiter: LoginLimiter::new(settings.login_limit),
            admin,
            settings,
        }))
    }

    pub fn address(&self, id: ExperimentId) -> String {
        format!("{}/e/{}", self.settings.public_base_url.trim_end_matches('/'), slug(id))
    }
}
