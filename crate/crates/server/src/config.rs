//! Command line and environment configuration.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use parley_core::provider::http::HttpChatProvider;
use parley_core::provider::mock::MockProvider;
use parley_core::provider::ChatProvider;
use parley_core::store::{JournalFile, Store};
use parley_core::Platform;

use crate::auth::{AdminCredentials, RateLimit};
use crate::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// Any server speaking the chat-completions wire format.
    Http,
    /// In-process echo provider, for demos and offline testing.
    Mock,
}

#[derive(Debug, Parser)]
#[command(name = "parley-server", version, about = "Run controlled experiments with conversational agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub serve: ServeArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a password on stdin and print its hash for PARLEY_ADMIN_PASSWORD_HASH.
    HashPassword,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    #[arg(long, env = "PARLEY_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Prefix of experiment addresses handed to participants.
    #[arg(long, env = "PARLEY_PUBLIC_BASE_URL", default_value = "http://localhost:8080")]
    pub public_base_url: String,
    /// Journal file path, or "memory" for a throwaway store.
    #[arg(long, env = "PARLEY_STORAGE", default_value = "parley-journal.jsonl")]
    pub storage: String,
    #[arg(long, env = "PARLEY_ADMIN_USER", default_value = "admin")]
    pub admin_user: String,
    /// Hashed immediately at startup; prefer --admin-password-hash.
    #[arg(long, env = "PARLEY_ADMIN_PASSWORD", hide_env_values = true)]
    pub admin_password: Option<String>,
    #[arg(long, env = "PARLEY_ADMIN_PASSWORD_HASH", hide_env_values = true)]
    pub admin_password_hash: Option<String>,
    #[arg(long, env = "PARLEY_PROVIDER", value_enum, default_value = "http")]
    pub provider: ProviderKind,
    /// e.g. https://api.example.com/v1 (requests go to {base}/chat/completions)
    #[arg(long, env = "PARLEY_PROVIDER_BASE_URL")]
    pub provider_base_url: Option<String>,
    #[arg(long, env = "PARLEY_PROVIDER_API_KEY", hide_env_values = true)]
    pub provider_api_key: Option<String>,
    /// Allocation seed; random when unset.
    #[arg(long, env = "PARLEY_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "PARLEY_ADMIN_TOKEN_TTL_SECS", default_value_t = 8 * 3600)]
    pub admin_token_ttl_secs: u64,
    #[arg(long, env = "PARLEY_PARTICIPANT_TOKEN_TTL_SECS", default_value_t = 12 * 3600)]
    pub participant_token_ttl_secs: u64,
    /// Finish sessions left open longer than this; never when unset.
    #[arg(long, env = "PARLEY_SESSION_AUTO_CLOSE_HOURS")]
    pub session_auto_close_hours: Option<u64>,
    /// Directory with the built web client.
    #[arg(long, env = "PARLEY_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, env = "PARLEY_LOGIN_MAX_FAILURES", default_value_t = 5)]
    pub login_max_failures: usize,
    #[arg(long, env = "PARLEY_LOGIN_WINDOW_SECS", default_value_t = 60)]
    pub login_window_secs: u64,
    #[arg(long, env = "PARLEY_LOGIN_LOCKOUT_SECS", default_value_t = 60)]
    pub login_lockout_secs: u64,
}

impl ServeArgs {
    pub fn credentials(&self) -> Result<AdminCredentials, String> {
        match (&self.admin_password_hash, &self.admin_password) {
            (Some(hash), _) => AdminCredentials::from_hash(&self.admin_user, hash),
            (None, Some(pw)) if !pw.is_empty() => Ok(AdminCredentials::from_password(&self.admin_user, pw)),
            _ => Err("set PARLEY_ADMIN_PASSWORD_HASH (or PARLEY_ADMIN_PASSWORD)".into()),
        }
    }

    pub fn provider(&self) -> Result<Arc<dyn ChatProvider>, String> {
        Ok(match self.provider {
            ProviderKind::Mock => Arc::new(MockProvider::echo()),
            ProviderKind::Http => {
                let base = self
                    .provider_base_url
                    .as_deref()
                    .ok_or("PARLEY_PROVIDER_BASE_URL is required with the http provider")?;
                Arc::new(HttpChatProvider::new(base, self.provider_api_key.clone()))
            }
        })
    }

    pub fn store(&self) -> Result<Store, String> {
        if self.storage == "memory" {
            return Ok(Store::in_memory());
        }
        Store::open(Box::new(JournalFile::new(&self.storage))).map_err(|e| format!("{}: {e}", self.storage))
    }

    pub fn platform(&self) -> Result<Platform, String> {
        let seed = self.seed.unwrap_or_else(rand::random);
        Ok(Platform::new(self.store()?, self.provider()?, seed))
    }

    pub fn settings(&self) -> Settings {
        Settings {
            public_base_url: self.public_base_url.clone(),
            admin_token_ttl: Duration::from_secs(self.admin_token_ttl_secs),
            participant_token_ttl: Duration::from_secs(self.participant_token_ttl_secs),
            login_limit: RateLimit {
                max_failures: self.login_max_failures.max(1),
                window: Duration::from_secs(self.login_window_secs),
                lockout: Duration::from_secs(self.login_lockout_secs),
            },
            static_dir: self.static_dir.clone(),
        }
    }
}
