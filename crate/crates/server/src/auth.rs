//! Admin credentials, bearer tokens and login rate limiting.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use argon2::password_hash::rand_core::OsRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::RngCore;
use subtle::ConstantTimeEq;

use parley_core::ExperimentId;

/// Hashes a password into a PHC string (argon2id, random salt).
pub fn hash_password(password: &str) -> String {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .expect("argon2 with default parameters cannot fail")
        .to_string()
}

/// The single researcher account. Only the salted hash is kept.
#[derive(Clone)]
pub struct AdminCredentials {
    username: String,
    password_hash: String,
}

impl AdminCredentials {
    pub fn from_password(username: &str, password: &str) -> Self {
        Self {
            username: username.to_owned(),
            password_hash: hash_password(password),
        }
    }

    pub fn from_hash(username: &str, phc: &str) -> Result<Self, String> {
        PasswordHash::new(phc).map_err(|e| format!("invalid password hash: {e}"))?;
        Ok(Self {
            username: username.to_owned(),
            password_hash: phc.to_owned(),
        })
    }

    /// Both comparisons always run, so timing reveals neither which part
    /// was wrong nor how much of the username matched.
    pub fn verify(&self, username: &str, password: &str) -> bool {
        let user_ok = self.username.as_bytes().ct_eq(username.as_bytes());
        let hash = PasswordHash::new(&self.password_hash).expect("validated at construction");
        let pass_ok = Argon2::default().verify_password(password.as_bytes(), &hash).is_ok();
        bool::from(user_ok) & pass_ok
    }
}

impl fmt::Debug for AdminCredentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdminCredentials")
            .field("username", &self.username)
            .field("password_hash", &"<redacted>")
            .finish()
    }
}

/// Identity bound to a participant token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipantClaims {
    pub experiment_id: ExperimentId,
    pub username: String,
}

/// Opaque random tokens with expiry, kept in memory.
pub struct TokenStore<T> {
    ttl: Duration,
    tokens: Mutex<HashMap<String, (T, Instant)>>,
}

impl<T: Clone> TokenStore<T> {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            tokens: Mutex::new(HashMap::new()),
        }
    }

    pub fn issue(&self, value: T) -> (String, DateTime<Utc>) {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        let token = URL_SAFE_NO_PAD.encode(bytes);
        let now = Instant::now();
        let mut tokens = self.tokens.lock();
        tokens.retain(|_, (_, expiry)| *expiry > now);
        tokens.insert(token.clone(), (value, now + self.ttl));
        let expires_at = Utc::now() + chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX);
        (token, expires_at)
    }

    pub fn get(&self, token: &str) -> Option<T> {
        let mut tokens = self.tokens.lock();
        match tokens.get(token) {
            Some((value, expiry)) if *expiry > Instant::now() => Some(value.clone()),
            Some(_) => {
                tokens.remove(token);
                None
            }
            None => None,
        }
    }

    pub fn revoke(&self, token: &str) {
        self.tokens.lock().remove(token);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    pub max_failures: usize,
    pub window: Duration,
    pub lockout: Duration,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            max_failures: 5,
            window: Duration::from_secs(60),
            lockout: Duration::from_secs(60),
        }
    }
}

#[derive(Default)]
struct Attempts {
    failures: VecDeque<Instant>,
    locked_until: Option<Instant>,
}

/// Locks a client out after `max_failures` failed logins within `window`.
pub struct LoginLimiter {
    limit: RateLimit,
    clients: Mutex<HashMap<String, Attempts>>,
}

impl LoginLimiter {
    pub fn new(limit: RateLimit) -> Self {
        Self {
            limit,
            clients: Mutex::new(HashMap::new()),
        }
    }

    /// `Err(retry_after)` while the client is locked out.
    pub fn check(&self, client: &str) -> Result<(), Duration> {
        let now = Instant::now();
        let clients = self.clients.lock();
        match clients.get(client).and_then(|a| a.locked_until) {
            Some(until) if until > now => Err(until - now),
            _ => Ok(()),
        }
    }

    pub fn record_failure(&self, client: &str) {
        let now = Instant::now();
        let mut clients = self.clients.lock();
        let a = clients.entry(client.to_owned()).or_default();
        a.failures.push_back(now);
        while a.failures.front().is_some_and(|t| now.duration_since(*t) > self.limit.window) {
            a.failures.pop_front();
        }
        if a.failures.len() >= self.limit.max_failures {
            a.locked_until = Some(now + self.limit.lockout);
            a.failures.clear();
            tracing::warn!(client, "admin login locked out after repeated failures");
        }
    }

    pub fn record_success(&self, client: &str) {
        self.clients.lock().remove(client);
    }
}
