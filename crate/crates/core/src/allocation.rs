//! Condition assignment and Experiment Boundaries.
//!
//! All mutations of an experiment's counters happen under that
//! experiment's lock, so check-and-increment is linearizable: concurrent
//! admissions can never push `participants_admitted` past the bound.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{AgentId, Boundaries, ConversationSession, ExperimentConfig, ExperimentId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentCounters {
    pub participants_admitted: u64,
    pub per_agent_counts: BTreeMap<AgentId, u64>,
    /// Started conversations per registered username.
    pub per_participant_conversations: HashMap<String, u64>,
}

impl ExperimentCounters {
    pub fn is_consistent(&self) -> bool {
        self.participants_admitted == self.per_agent_counts.values().sum::<u64>()
            && self.participants_admitted == self.per_participant_conversations.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ExperimentFull,
    ExperimentInactive,
    UsernameTaken,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::ExperimentFull => "experiment full",
            RejectReason::ExperimentInactive => "experiment inactive",
            RejectReason::UsernameTaken => "username taken",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted(AgentId),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quota {
    Allowed,
    /// Accept this message, then force the finish flow.
    LastMessage,
    Denied,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuotaError {
    #[error("unknown participant {0:?}")]
    UnknownParticipant(String),
    #[error("session is finished")]
    SessionFinished,
}

/// Draws a condition with probability `weight_percent / 100`.
///
/// `config` must have passed validation (1 or 2 agents, weights summing to 100).
pub fn assign_condition<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> AgentId {
    let draw = rng.random_range(0..100u32);
    let mut upper = 0u32;
    for agent in &config.agents {
        upper += u32::from(agent.weight_percent);
        if draw < upper {
            return agent.agent_id;
        }
    }
    config
        .agents
        .last()
        .expect("validated experiment has at least one agent")
        .agent_id
}

/// Random stream for one participant's draw, keyed by seed, experiment and
/// username so the assignment does not depend on arrival order.
pub fn participant_rng(seed: u64, experiment_id: ExperimentId, username: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(experiment_id.0.as_bytes());
    hasher.update(username.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn under(bound: Option<u32>, count: u64) -> bool {
    bound.is_none_or(|b| count < u64::from(b))
}

pub fn conversation_quota(boundaries: &Boundaries, started: u64) -> Quota {
    if under(boundaries.max_conversations_per_participant, started) {
        Quota::Allowed
    } else {
        Quota::Denied
    }
}

/// Counts the participant's messages in `session` against the per-interaction
/// limit.
pub fn check_message_quota(boundaries: &Boundaries, session: &ConversationSession) -> Result<Quota, QuotaError> {
    if !session.is_open() {
        return Err(QuotaError::SessionFinished);
    }
    let Some(limit) = boundaries.max_messages_per_interaction else {
        return Ok(Quota::Allowed);
    };
    let sent = session.user_message_count() as u64;
    let limit = u64::from(limit);
    Ok(if sent + 1 < limit {
        Quota::Allowed
    } else if sent + 1 == limit {
        Quota::LastMessage
    } else {
        Quota::Denied
    })
}

/// Per-experiment counters behind per-experiment locks.
pub struct AdmissionControl {
    seed: u64,
    experiments: Mutex<HashMap<ExperimentId, Arc<Mutex<ExperimentCounters>>>>,
}

impl AdmissionControl {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            experiments: Mutex::new(HashMap::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn slot(&self, experiment_id: ExperimentId) -> Arc<Mutex<ExperimentCounters>> {
        self.experiments.lock().entry(experiment_id).or_default().clone()
    }

    pub fn counters(&self, experiment_id: ExperimentId) -> ExperimentCounters {
        self.slot(experiment_id).lock().clone()
    }

    /// Runs `f` while holding the experiment's lock, so that status changes
    /// are ordered with respect to admissions.
    pub fn with_experiment_locked<T>(&self, experiment_id: ExperimentId, f: impl FnOnce() -> T) -> T {
        let slot = self.slot(experiment_id);
        let _guard = slot.lock();
        f()
    }

    /// Rebuilds counters for a previously admitted participant.
    pub fn restore(&self, experiment_id: ExperimentId, username: &str, agent_id: AgentId, conversations: u64) {
        let slot = self.slot(experiment_id);
        let mut c = slot.lock();
        if c
            .per_participant_conversations
            .insert(username.to_owned(), conversations)
            .is_none()
        {
            c.participants_admitted += 1;
            *c.per_agent_counts.entry(agent_id).or_default() += 1;
        }
    }

    /// Atomically checks status, username uniqueness and the participant
    /// bound, draws a condition, and calls `persist` with it. Counters are
    /// only incremented when `persist` succeeds.
    pub fn admit_participant<E>(
        &self,
        config: &ExperimentConfig,
        username: &str,
        persist: impl FnOnce(AgentId) -> Result<(), E>,
    ) -> Result<Admission, E> {
        let slot = self.slot(config.id);
        let mut c = slot.lock();
        if !config.is_active() {
            return Ok(Admission::Rejected(RejectReason::ExperimentInactive));
        }
        if c.per_participant_conversations.contains_key(username) {
            return Ok(Admission::Rejected(RejectReason::UsernameTaken));
        }
        if !under(config.boundaries.max_participants, c.participants_admitted) {
            return Ok(Admission::Rejected(RejectReason::ExperimentFull));
        }
        let agent_id = assign_condition(config, &mut participant_rng(self.seed, config.id, username));
        persist(agent_id)?;
        c.participants_admitted += 1;
        *c.per_agent_counts.entry(agent_id).or_default() += 1;
        c.per_participant_conversations.insert(username.to_owned(), 0);
        Ok(Admission::Admitted(agent_id))
    }

    pub fn check_conversation_quota(&self, config: &ExperimentConfig, username: &str) -> Result<Quota, QuotaError> {
        let c = self.counters(config.id);
        let started = c
            .per_participant_conversations
            .get(username)
            .ok_or_else(|| QuotaError::UnknownParticipant(username.to_owned()))?;
        Ok(conversation_quota(&config.boundaries, *started))
    }

    /// Checks the conversation quota and, when allowed, runs `create` and
    /// counts the new conversation, all under the experiment lock.
    pub fn begin_conversation<T, E>(
        &self,
        config: &ExperimentConfig,
        username: &str,
        create: impl FnOnce() -> Result<T, E>,
    ) -> Result<Result<T, Quota>, BeginError<E>> {
        let slot = self.slot(config.id);
        let mut c = slot.lock();
        let started = *c
            .per_participant_conversations
            .get(username)
            .ok_or_else(|| BeginError::Quota(QuotaError::UnknownParticipant(username.to_owned())))?;
        match conversation_quota(&config.boundaries, started) {
            Quota::Allowed => {
                let created = create().map_err(BeginError::Inner)?;
                c.per_participant_conversations.insert(username.to_owned(), started + 1);
                Ok(Ok(created))
            }
            denied => Ok(Err(denied)),
        }
    }
}

#[derive(Debug)]
pub enum BeginError<E> {
    Quota(QuotaError),
    Inner(E),
}
