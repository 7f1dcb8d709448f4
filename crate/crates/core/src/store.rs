//! Persistence of configuration, participants, sessions and messages.
//!
//! Every mutation is an [`Event`]. The store checks an event against the
//! current state, hands it to the [`Persistence`] backend, then applies it.
//! Reopening a backend replays its events, so state after a restart equals
//! state before it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forms::FormDefinition;
use crate::model::{
    AgentConfig, AgentId, Annotation, Answers, Author, ConversationSession, Delivery, ExperimentConfig, ExperimentId,
    ExperimentStatus, FormId, MessageId, MessageRecord, ParticipantRecord, SessionId,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown experiment {0}")]
    UnknownExperiment(ExperimentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown form {0}")]
    UnknownForm(FormId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown message {0}")]
    UnknownMessage(MessageId),
    #[error("unknown participant {0:?}")]
    UnknownParticipant(String),
    #[error("username taken")]
    UsernameTaken,
    #[error("session is finished")]
    SessionClosed,
    #[error("role alternation violated: {0}")]
    Alternation(String),
    #[error("only agent messages can be annotated")]
    NotAgentMessage,
    #[error("{0}")]
    InUse(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("storage I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt journal at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// A single state change, as written to the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Event {
    PutAgent(AgentConfig),
    DeleteAgent { id: AgentId },
    PutForm(FormDefinition),
    DeleteForm { id: FormId },
    PutExperiment(ExperimentConfig),
    CreateParticipant(ParticipantRecord),
    CreateSession(ConversationSession),
    AppendMessage(MessageRecord),
    SetAnnotation { message_id: MessageId, annotation: Annotation },
    FinishSession {
        session_id: SessionId,
        finished_at: DateTime<Utc>,
        #[serde(default)]
        post_form_answers: Option<Answers>,
    },
}

/// Durable sink for events.
pub trait Persistence: Send + Sync {
    fn load(&mut self) -> Result<Vec<Event>, StoreError>;
    fn append(&mut self, event: &Event) -> Result<(), StoreError>;
}

/// Keeps nothing; state lives only in memory.
#[derive(Debug, Default)]
pub struct MemoryBackend;

impl Persistence for MemoryBackend {
    fn load(&mut self) -> Result<Vec<Event>, StoreError> {
        Ok(Vec::new())
    }

    fn append(&mut self, _event: &Event) -> Result<(), StoreError> {
        Ok(())
    }
}

/// Append-only JSON-lines journal of events.
pub struct JournalFile {
    path: PathBuf,
    writer: Option<BufWriter<File>>,
    sync: bool,
}

impl JournalFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            writer: None,
            sync: false,
        }
    }

    /// fsync after every event.
    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Persistence for JournalFile {
    fn load(&mut self) -> Result<Vec<Event>, StoreError> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut events = Vec::new();
        let mut valid_len = 0u64;
        if self.path.exists() {
            let mut reader = BufReader::new(File::open(&self.path)?);
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                number += 1;
                if !line.ends_with('\n') {
                    // torn final write; drop it
                    tracing::warn!(line = number, "discarding incomplete journal record");
                    break;
                }
                let event = serde_json::from_str(line.trim_end()).map_err(|e| StoreError::Corrupt {
                    line: number,
                    reason: e.to_string(),
                })?;
                events.push(event);
                valid_len += read as u64;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        file.set_len(valid_len)?;
        self.writer = Some(BufWriter::new(file));
        Ok(events)
    }

    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let writer = match &mut self.writer {
            Some(w) => w,
            None => {
                let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
                self.writer.insert(BufWriter::new(file))
            }
        };
        serde_json::to_writer(&mut *writer, event).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if self.sync {
            writer.get_ref().sync_data()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment_id: ExperimentId,
    pub title: String,
    pub description: String,
    pub participants_count: u64,
    pub sessions_count: u64,
    pub open_sessions_count: u64,
    pub launch_date: DateTime<Utc>,
    pub status: ExperimentStatus,
}

/// Everything stored about one experiment, read at a single point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSnapshot {
    pub experiment: ExperimentConfig,
    pub agents: Vec<AgentConfig>,
    pub forms: Vec<FormDefinition>,
    pub participants: Vec<ParticipantRecord>,
    pub sessions: Vec<ConversationSession>,
}

#[derive(Default)]
struct State {
    agents: IndexMap<AgentId, AgentConfig>,
    forms: IndexMap<FormId, FormDefinition>,
    experiments: IndexMap<ExperimentId, ExperimentConfig>,
    participants: IndexMap<(ExperimentId, String), ParticipantRecord>,
    sessions: IndexMap<SessionId, ConversationSession>,
    messages: HashMap<MessageId, (SessionId, usize)>,
}

impl State {
    fn session(&self, id: SessionId) -> Result<&ConversationSession, StoreError> {
        self.sessions.get(&id).ok_or(StoreError::UnknownSession(id))
    }

    fn check(&self, event: &Event) -> Result<(), StoreError> {
        match event {
            Event::PutAgent(_) | Event::PutForm(_) => Ok(()),
            Event::DeleteAgent { id } => {
                if !self.agents.contains_key(id) {
                    return Err(StoreError::UnknownAgent(*id));
                }
                if self.experiments.values().any(|e| e.agents.iter().any(|a| a.agent_id == *id))
                    || self.sessions.values().any(|s| s.agent_id == *id)
                {
                    return Err(StoreError::InUse(format!("agent {id} is used by an experiment")));
                }
                Ok(())
            }
            Event::DeleteForm { id } => {
                if !self.forms.contains_key(id) {
                    return Err(StoreError::UnknownForm(*id));
                }
                if self.experiments.values().any(|e| e.forms.iter().any(|(_, f)| f == *id)) {
                    return Err(StoreError::InUse(format!("form {id} is linked to an experiment")));
                }
                Ok(())
            }
            Event::PutExperiment(config) => {
                for a in &config.agents {
                    if !self.agents.contains_key(&a.agent_id) {
                        return Err(StoreError::UnknownAgent(a.agent_id));
                    }
                }
                for (_, form_id) in config.forms.iter() {
                    if !self.forms.contains_key(&form_id) {
                        return Err(StoreError::UnknownForm(form_id));
                    }
                }
                Ok(())
            }
            Event::CreateParticipant(p) => {
                let experiment = self
                    .experiments
                    .get(&p.experiment_id)
                    .ok_or(StoreError::UnknownExperiment(p.experiment_id))?;
                if !experiment.agents.iter().any(|a| a.agent_id == p.condition_agent_id) {
                    return Err(StoreError::UnknownAgent(p.condition_agent_id));
                }
                if self.participants.contains_key(&(p.experiment_id, p.username.clone())) {
                    return Err(StoreError::UsernameTaken);
                }
                Ok(())
            }
            Event::CreateSession(s) => {
                if self.sessions.contains_key(&s.id) {
                    return Err(StoreError::DuplicateId(s.id.to_string()));
                }
                let participant = self
                    .participants
                    .get(&(s.experiment_id, s.username.clone()))
                    .ok_or_else(|| StoreError::UnknownParticipant(s.username.clone()))?;
                if participant.condition_agent_id != s.agent_id {
                    return Err(StoreError::InUse("session agent differs from participant condition".into()));
                }
                if !s.messages.is_empty() {
                    return Err(StoreError::Alternation("sessions start empty".into()));
                }
                Ok(())
            }
            Event::AppendMessage(m) => {
                let session = self.session(m.session_id)?;
                if !session.is_open() {
                    return Err(StoreError::SessionClosed);
                }
                if self.messages.contains_key(&m.id) {
                    return Err(StoreError::DuplicateId(m.id.to_string()));
                }
                let expected = session.next_author();
                if m.author != expected {
                    return Err(StoreError::Alternation(format!(
                        "expected {} message at position {}",
                        expected.as_str(),
                        session.messages.len() + 1
                    )));
                }
                if m.position as usize != session.messages.len() + 1 {
                    return Err(StoreError::Alternation(format!("position {} out of order", m.position)));
                }
                if let Some(last) = session.messages.last() {
                    if m.sent_at < last.sent_at {
                        return Err(StoreError::Alternation("timestamps must not decrease".into()));
                    }
                }
                if m.annotation.is_some() && m.author != Author::Agent {
                    return Err(StoreError::NotAgentMessage);
                }
                Ok(())
            }
            Event::SetAnnotation { message_id, .. } => {
                let &(session_id, index) = self
                    .messages
                    .get(message_id)
                    .ok_or(StoreError::UnknownMessage(*message_id))?;
                if self.sessions[&session_id].messages[index].author != Author::Agent {
                    return Err(StoreError::NotAgentMessage);
                }
                Ok(())
            }
            Event::FinishSession { session_id, .. } => {
                if self.session(*session_id)?.is_open() {
                    Ok(())
                } else {
                    Err(StoreError::SessionClosed)
                }
            }
        }
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::PutAgent(a) => {
                self.agents.insert(a.id, a);
            }
            Event::DeleteAgent { id } => {
                self.agents.shift_remove(&id);
            }
            Event::PutForm(f) => {
                self.forms.insert(f.id, f);
            }
            Event::DeleteForm { id } => {
                self.forms.shift_remove(&id);
            }
            Event::PutExperiment(e) => {
                self.experiments.insert(e.id, e);
            }
            Event::CreateParticipant(p) => {
                self.participants.insert((p.experiment_id, p.username.clone()), p);
            }
            Event::CreateSession(s) => {
                self.sessions.insert(s.id, s);
            }
            Event::AppendMessage(m) => {
                let session = self.sessions.get_mut(&m.session_id).expect("checked");
                self.messages.insert(m.id, (m.session_id, session.messages.len()));
                session.messages.push(m);
            }
            Event::SetAnnotation { message_id, annotation } => {
                let (session_id, index) = self.messages[&message_id];
                self.sessions.get_mut(&session_id).expect("checked").messages[index].annotation = Some(annotation);
            }
            Event::FinishSession {
                session_id,
                finished_at,
                post_form_answers,
            } => {
                let session = self.sessions.get_mut(&session_id).expect("checked");
                session.finished_at = Some(finished_at);
                if post_form_answers.is_some() {
                    session.post_form_answers = post_form_answers;
                }
            }
        }
    }

    fn summary(&self, id: ExperimentId) -> Result<ExperimentSummary, StoreError> {
        let e = self.experiments.get(&id).ok_or(StoreError::UnknownExperiment(id))?;
        let participants_count = self.participants.keys().filter(|(exp, _)| *exp == id).count() as u64;
        let (mut sessions_count, mut open_sessions_count) = (0, 0);
        for s in self.sessions.values().filter(|s| s.experiment_id == id) {
            sessions_count += 1;
            if s.is_open() {
                open_sessions_count += 1;
            }
        }
        Ok(ExperimentSummary {
            experiment_id: id,
            title: e.title.clone(),
            description: e.description.clone(),
            participants_count,
            sessions_count,
            open_sessions_count,
            launch_date: e.launch_date,
            status: e.status,
        })
    }
}

pub struct Store {
    state: RwLock<State>,
    backend: parking_lot::Mutex<Box<dyn Persistence>>,
}

impl Store {
    /// Opens a store, replaying whatever the backend holds.
    pub fn open(mut backend: Box<dyn Persistence>) -> Result<Self, StoreError> {
        let mut state = State::default();
        for (i, event) in backend.load()?.into_iter().enumerate() {
            state.check(&event).map_err(|e| StoreError::Corrupt {
                line: i + 1,
                reason: e.to_string(),
            })?;
            state.apply(event);
        }
        Ok(Self {
            state: RwLock::new(state),
            backend: parking_lot::Mutex::new(backend),
        })
    }

    pub fn in_memory() -> Self {
        Self::open(Box::new(MemoryBackend)).expect("memory backend cannot fail")
    }

    fn commit(&self, event: Event) -> Result<(), StoreError> {
        let mut state = self.state.write();
        state.check(&event)?;
        self.backend.lock().append(&event)?;
        state.apply(event);
        Ok(())
    }

    pub fn put_agent(&self, agent: AgentConfig) -> Result<(), StoreError> {
        self.commit(Event::PutAgent(agent))
    }

    pub fn delete_agent(&self, id: AgentId) -> Result<(), StoreError> {
        self.commit(Event::DeleteAgent { id })
    }

    pub fn put_form(&self, form: FormDefinition) -> Result<(), StoreError> {
        self.commit(Event::PutForm(form))
    }

    pub fn delete_form(&self, id: FormId) -> Result<(), StoreError> {
        self.commit(Event::DeleteForm { id })
    }

    pub fn put_experiment(&self, experiment: ExperimentConfig) -> Result<(), StoreError> {
        self.commit(Event::PutExperiment(experiment))
    }

    pub fn agent(&self, id: AgentId) -> Result<AgentConfig, StoreError> {
        self.state.read().agents.get(&id).cloned().ok_or(StoreError::UnknownAgent(id))
    }

    pub fn agents(&self) -> Vec<AgentConfig> {
        self.state.read().agents.values().cloned().collect()
    }

    pub fn form(&self, id: FormId) -> Result<FormDefinition, StoreError> {
        self.state.read().forms.get(&id).cloned().ok_or(StoreError::UnknownForm(id))
    }

    pub fn forms(&self) -> Vec<FormDefinition> {
        self.state.read().forms.values().cloned().collect()
    }

    pub fn experiment(&self, id: ExperimentId) -> Result<ExperimentConfig, StoreError> {
        self.state
            .read()
            .experiments
            .get(&id)
            .cloned()
            .ok_or(StoreError::UnknownExperiment(id))
    }

    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        self.state.read().experiments.values().cloned().collect()
    }

    pub fn create_participant(&self, record: ParticipantRecord) -> Result<(), StoreError> {
        self.commit(Event::CreateParticipant(record))
    }

    pub fn participant(&self, experiment_id: ExperimentId, username: &str) -> Option<ParticipantRecord> {
        self.state
            .read()
            .participants
            .get(&(experiment_id, username.to_owned()))
            .cloned()
    }

    pub fn participants(&self, experiment_id: ExperimentId) -> Vec<ParticipantRecord> {
        self.state
            .read()
            .participants
            .values()
            .filter(|p| p.experiment_id == experiment_id)
            .cloned()
            .collect()
    }

    /// Stores a new, empty session.
    pub fn create_session(&self, session: ConversationSession) -> Result<(), StoreError> {
        self.commit(Event::CreateSession(session))
    }

    pub fn session(&self, id: SessionId) -> Result<ConversationSession, StoreError> {
        self.state.read().session(id).cloned()
    }

    pub fn sessions(&self, experiment_id: ExperimentId) -> Vec<ConversationSession> {
        self.state
            .read()
            .sessions
            .values()
            .filter(|s| s.experiment_id == experiment_id)
            .cloned()
            .collect()
    }

    /// Appends `message` at the next position, stamping it with the session
    /// id and a timestamp no earlier than the previous message's.
    pub fn append_message(&self, session_id: SessionId, mut message: MessageRecord) -> Result<MessageRecord, StoreError> {
        let mut state = self.state.write();
        let session = state.session(session_id)?;
        message.session_id = session_id;
        message.position = session.messages.len() as u32 + 1;
        let now = Utc::now();
        message.sent_at = session.messages.last().map_or(now, |last| last.sent_at.max(now));
        if message.author == Author::User {
            message.delivery = Delivery::Complete;
        }
        let event = Event::AppendMessage(message.clone());
        state.check(&event)?;
        self.backend.lock().append(&event)?;
        state.apply(event);
        Ok(message)
    }

    /// Returns the message together with its session.
    pub fn message(&self, id: MessageId) -> Result<(MessageRecord, ConversationSession), StoreError> {
        let state = self.state.read();
        let &(session_id, index) = state.messages.get(&id).ok_or(StoreError::UnknownMessage(id))?;
        let session = &state.sessions[&session_id];
        Ok((session.messages[index].clone(), session.clone()))
    }

    /// Sets or overwrites the annotation on an agent message.
    pub fn set_annotation(&self, message_id: MessageId, annotation: Annotation) -> Result<(), StoreError> {
        self.commit(Event::SetAnnotation { message_id, annotation })
    }

    /// Closes a session. Returns `false` (and changes nothing) when it was
    /// already finished.
    pub fn finish_session(&self, session_id: SessionId, post_form_answers: Option<Answers>) -> Result<bool, StoreError> {
        self.finish_session_at(session_id, Utc::now(), post_form_answers)
    }

    fn finish_session_at(
        &self,
        session_id: SessionId,
        finished_at: DateTime<Utc>,
        post_form_answers: Option<Answers>,
    ) -> Result<bool, StoreError> {
        match self.commit(Event::FinishSession {
            session_id,
            finished_at,
            post_form_answers,
        }) {
            Ok(()) => Ok(true),
            Err(StoreError::SessionClosed) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Finishes every open session started more than `max_age` ago.
    pub fn close_stale_sessions(&self, max_age: chrono::Duration, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let stale: Vec<SessionId> = self
            .state
            .read()
            .sessions
            .values()
            .filter(|s| s.is_open() && now - s.started_at > max_age)
            .map(|s| s.id)
            .collect();
        let mut closed = 0;
        for id in stale {
            if self.finish_session_at(id, now, None)? {
                closed += 1;
            }
        }
        Ok(closed)
    }

    pub fn summarize_experiment(&self, id: ExperimentId) -> Result<ExperimentSummary, StoreError> {
        self.state.read().summary(id)
    }

    pub fn snapshot(&self, id: ExperimentId) -> Result<ExperimentSnapshot, StoreError> {
        let state = self.state.read();
        let experiment = state.experiments.get(&id).cloned().ok_or(StoreError::UnknownExperiment(id))?;
        let agents = experiment
            .agents
            .iter()
            .filter_map(|a| state.agents.get(&a.agent_id).cloned())
            .collect();
        let mut form_ids: Vec<FormId> = experiment.forms.iter().map(|(_, f)| f).collect();
        form_ids.sort_by_key(|id| state.forms.get_index_of(id));
        form_ids.dedup();
        let forms = form_ids.iter().filter_map(|f| state.forms.get(f).cloned()).collect();
        Ok(ExperimentSnapshot {
            agents,
            forms,
            participants: state.participants.values().filter(|p| p.experiment_id == id).cloned().collect(),
            sessions: state.sessions.values().filter(|s| s.experiment_id == id).cloned().collect(),
            experiment,
        })
    }

    /// Loads a snapshot (typically decoded from an export) into this store,
    /// keeping every id and timestamp.
    pub fn import_snapshot(&self, snapshot: &ExperimentSnapshot) -> Result<(), StoreError> {
        for a in &snapshot.agents {
            self.put_agent(a.clone())?;
        }
        for f in &snapshot.forms {
            self.put_form(f.clone())?;
        }
        self.put_experiment(snapshot.experiment.clone())?;
        for p in &snapshot.participants {
            self.create_participant(p.clone())?;
        }
        for s in &snapshot.sessions {
            let mut empty = s.clone();
            empty.messages.clear();
            empty.finished_at = None;
            empty.post_form_answers = None;
            self.create_session(empty)?;
            for m in &s.messages {
                self.commit(Event::AppendMessage(m.clone()))?;
            }
            if let Some(at) = s.finished_at {
                self.finish_session_at(s.id, at, s.post_form_answers.clone())?;
            }
        }
        Ok(())
    }
}
