//! Analysis-ready exports.
//!
//! An [`ExportBundle`] holds experiment metadata and four flat tables. It is
//! written either as one JSON document (`{experiment_id}.json`) or as one
//! CSV file per table (`{experiment_id}_{table}.csv`, UTF-8, RFC-4180
//! quoting, header row first).
//!
//! Column order per table:
//!
//! | table | columns |
//! |---|---|
//! | participants | experiment_id, username, condition, condition_label, age, gender, registered_at, session_count |
//! | sessions | experiment_id, username, condition, session_id, started_at, finished_at, user_message_count, agent_message_count |
//! | messages | experiment_id, username, condition, session_id, message_id, position, author, text, sent_at, annotation, delivery |
//! | responses | experiment_id, username, condition, session_id, phase, submitted_at, then one column per dataset key |
//!
//! Dataset-key columns follow the registration, before and after forms'
//! question order, then any remaining keys alphabetically.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::forms::{dataset_key, FormDefinition, Phase};
use crate::model::{
    check_role_sequence, AgentConfig, AgentId, Annotation, Answers, Author, ConversationSession, Delivery,
    ExperimentConfig, ExperimentId, MessageId, MessageRecord, ParticipantRecord, SessionId,
};
use crate::store::{ExperimentSnapshot, ExperimentSummary};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("export failed integrity check: {0:?}")]
    Integrity(Vec<String>),
    #[error("export I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bundle cannot be imported: {0}")]
    Import(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Participants,
    Sessions,
    Messages,
    Responses,
}

impl Table {
    pub const ALL: [Table; 4] = [Table::Participants, Table::Sessions, Table::Messages, Table::Responses];

    pub fn as_str(self) -> &'static str {
        match self {
            Table::Participants => "participants",
            Table::Sessions => "sessions",
            Table::Messages => "messages",
            Table::Responses => "responses",
        }
    }

    pub fn file_name(self, experiment_id: ExperimentId) -> String {
        format!("{experiment_id}_{}.csv", self.as_str())
    }
}

impl std::str::FromStr for Table {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Table::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown table {s:?}"))
    }
}

pub fn json_file_name(experiment_id: ExperimentId) -> String {
    format!("{experiment_id}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub config: ExperimentConfig,
    pub agents: Vec<AgentConfig>,
    pub forms: Vec<FormDefinition>,
    pub summary: ExperimentSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRow {
    pub experiment_id: ExperimentId,
    pub username: String,
    pub condition: AgentId,
    pub condition_label: String,
    pub age: Option<u32>,
    pub gender: Option<String>,
    pub registered_at: DateTime<Utc>,
    pub session_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub experiment_id: ExperimentId,
    pub username: String,
    pub condition: AgentId,
    pub session_id: SessionId,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub user_message_count: u64,
    pub agent_message_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRow {
    pub experiment_id: ExperimentId,
    pub username: String,
    pub condition: AgentId,
    pub session_id: SessionId,
    pub message_id: MessageId,
    pub position: u32,
    pub author: Author,
    pub text: String,
    pub sent_at: DateTime<Utc>,
    pub annotation: Option<Annotation>,
    pub delivery: Delivery,
}

/// One submitted questionnaire, answers under dataset keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub experiment_id: ExperimentId,
    pub username: String,
    pub condition: AgentId,
    pub session_id: Option<SessionId>,
    pub phase: Phase,
    pub submitted_at: DateTime<Utc>,
    #[serde(flatten)]
    pub answers: Answers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub experiment: ExperimentMeta,
    pub participants: Vec<ParticipantRow>,
    pub sessions: Vec<SessionRow>,
    pub messages: Vec<MessageRow>,
    pub responses: Vec<ResponseRow>,
}

fn summarize(snapshot: &ExperimentSnapshot) -> ExperimentSummary {
    let e = &snapshot.experiment;
    ExperimentSummary {
        experiment_id: e.id,
        title: e.title.clone(),
        description: e.description.clone(),
        participants_count: snapshot.participants.len() as u64,
        sessions_count: snapshot.sessions.len() as u64,
        open_sessions_count: snapshot.sessions.iter().filter(|s| s.is_open()).count() as u64,
        launch_date: e.launch_date,
        status: e.status,
    }
}

impl ExportBundle {
    /// Flattens a snapshot into tables and checks referential integrity.
    pub fn from_snapshot(snapshot: &ExperimentSnapshot) -> Result<Self, ExportError> {
        let exp = &snapshot.experiment;
        let condition_of: HashMap<&str, AgentId> = snapshot
            .participants
            .iter()
            .map(|p| (p.username.as_str(), p.condition_agent_id))
            .collect();
        let mut session_counts: HashMap<&str, u64> = HashMap::new();
        for s in &snapshot.sessions {
            *session_counts.entry(s.username.as_str()).or_default() += 1;
        }

        let participants = snapshot
            .participants
            .iter()
            .map(|p| ParticipantRow {
                experiment_id: exp.id,
                username: p.username.clone(),
                condition: p.condition_agent_id,
                condition_label: exp.condition_label(p.condition_agent_id).unwrap_or_default(),
                age: p.age,
                gender: p.gender.clone(),
                registered_at: p.registered_at,
                session_count: session_counts.get(p.username.as_str()).copied().unwrap_or(0),
            })
            .collect();

        let mut sessions = Vec::new();
        let mut messages = Vec::new();
        let mut responses = Vec::new();
        for p in &snapshot.participants {
            if let Some(answers) = &p.registration_answers {
                responses.push(ResponseRow {
                    experiment_id: exp.id,
                    username: p.username.clone(),
                    condition: p.condition_agent_id,
                    session_id: None,
                    phase: Phase::Registration,
                    submitted_at: p.registered_at,
                    answers: answers.clone(),
                });
            }
        }
        for s in &snapshot.sessions {
            let condition = condition_of.get(s.username.as_str()).copied().unwrap_or(s.agent_id);
            let count = |a| s.messages.iter().filter(|m| m.author == a).count() as u64;
            sessions.push(SessionRow {
                experiment_id: exp.id,
                username: s.username.clone(),
                condition,
                session_id: s.id,
                started_at: s.started_at,
                finished_at: s.finished_at,
                user_message_count: count(Author::User),
                agent_message_count: count(Author::Agent),
            });
            messages.extend(s.messages.iter().map(|m| MessageRow {
                experiment_id: exp.id,
                username: s.username.clone(),
                condition,
                session_id: s.id,
                message_id: m.id,
                position: m.position,
                author: m.author,
                text: m.text.clone(),
                sent_at: m.sent_at,
                annotation: m.annotation,
                delivery: m.delivery,
            }));
            let phases = [
                (Phase::Before, &s.pre_form_answers, Some(s.started_at)),
                (Phase::After, &s.post_form_answers, s.finished_at),
            ];
            for (phase, answers, at) in phases {
                if let (Some(answers), Some(at)) = (answers, at) {
                    responses.push(ResponseRow {
                        experiment_id: exp.id,
                        username: s.username.clone(),
                        condition,
                        session_id: Some(s.id),
                        phase,
                        submitted_at: at,
                        answers: answers.clone(),
                    });
                }
            }
        }

        let bundle = Self {
            experiment: ExperimentMeta {
                config: exp.clone(),
                agents: snapshot.agents.clone(),
                forms: snapshot.forms.clone(),
                summary: summarize(snapshot),
            },
            participants,
            sessions,
            messages,
            responses,
        };
        bundle.check_integrity().map_err(ExportError::Integrity)?;
        Ok(bundle)
    }

    /// Checks that rows reference each other consistently and that the
    /// summary agrees with the tables.
    pub fn check_integrity(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let usernames: HashSet<&str> = self.participants.iter().map(|p| p.username.as_str()).collect();
        let session_ids: HashSet<SessionId> = self.sessions.iter().map(|s| s.session_id).collect();

        for s in &self.sessions {
            if !usernames.contains(s.username.as_str()) {
                problems.push(format!("session {} references unknown participant {}", s.session_id, s.username));
            }
        }
        let mut by_session: BTreeMap<SessionId, Vec<&MessageRow>> = BTreeMap::new();
        for m in &self.messages {
            if !session_ids.contains(&m.session_id) {
                problems.push(format!("message {} references unknown session {}", m.message_id, m.session_id));
            }
            if m.annotation.is_some() && m.author != Author::Agent {
                problems.push(format!("message {} is a user message with an annotation", m.message_id));
            }
            by_session.entry(m.session_id).or_default().push(m);
        }
        for s in &self.sessions {
            let mut rows = by_session.remove(&s.session_id).unwrap_or_default();
            rows.sort_by_key(|m| m.position);
            let users = rows.iter().filter(|m| m.author == Author::User).count() as u64;
            if users != s.user_message_count || rows.len() as u64 != s.user_message_count + s.agent_message_count {
                problems.push(format!("session {} message counts disagree with message rows", s.session_id));
            }
            if let Err(e) = check_role_sequence(rows.iter().map(|m| m.author)) {
                problems.push(format!("session {}: {e}", s.session_id));
            }
            if rows.windows(2).any(|w| w[1].sent_at < w[0].sent_at) {
                problems.push(format!("session {} timestamps decrease", s.session_id));
            }
        }
        for r in &self.responses {
            if !usernames.contains(r.username.as_str()) {
                problems.push(format!("response references unknown participant {}", r.username));
            }
            if let Some(sid) = r.session_id {
                if !session_ids.contains(&sid) {
                    problems.push(format!("response references unknown session {sid}"));
                }
            }
        }
        let summary = &self.experiment.summary;
        let open = self.sessions.iter().filter(|s| s.finished_at.is_none()).count() as u64;
        if summary.participants_count != self.participants.len() as u64
            || summary.sessions_count != self.sessions.len() as u64
            || summary.open_sessions_count != open
        {
            problems.push("summary counts disagree with tables".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// Rebuilds the stored records this bundle was made from.
    pub fn to_snapshot(&self) -> Result<ExperimentSnapshot, ExportError> {
        self.check_integrity().map_err(ExportError::Integrity)?;
        let mut registration: HashMap<&str, Answers> = HashMap::new();
        let mut pre: HashMap<SessionId, Answers> = HashMap::new();
        let mut post: HashMap<SessionId, Answers> = HashMap::new();
        for r in &self.responses {
            let missing = || ExportError::Import(format!("{} response without session", r.phase.as_str()));
            match r.phase {
                Phase::Registration => {
                    registration.insert(r.username.as_str(), r.answers.clone());
                }
                Phase::Before => {
                    pre.insert(r.session_id.ok_or_else(missing)?, r.answers.clone());
                }
                Phase::After => {
                    post.insert(r.session_id.ok_or_else(missing)?, r.answers.clone());
                }
            }
        }
        let participants = self
            .participants
            .iter()
            .map(|p| ParticipantRecord {
                username: p.username.clone(),
                experiment_id: p.experiment_id,
                condition_agent_id: p.condition,
                age: p.age,
                gender: p.gender.clone(),
                registration_answers: registration.remove(p.username.as_str()),
                registered_at: p.registered_at,
            })
            .collect();
        let mut messages: HashMap<SessionId, Vec<MessageRecord>> = HashMap::new();
        for m in &self.messages {
            messages.entry(m.session_id).or_default().push(MessageRecord {
                id: m.message_id,
                session_id: m.session_id,
                position: m.position,
                author: m.author,
                text: m.text.clone(),
                sent_at: m.sent_at,
                annotation: m.annotation,
                delivery: m.delivery,
            });
        }
        let sessions = self
            .sessions
            .iter()
            .map(|s| {
                let mut msgs = messages.remove(&s.session_id).unwrap_or_default();
                msgs.sort_by_key(|m| m.position);
                ConversationSession {
                    id: s.session_id,
                    username: s.username.clone(),
                    experiment_id: s.experiment_id,
                    agent_id: s.condition,
                    started_at: s.started_at,
                    finished_at: s.finished_at,
                    messages: msgs,
                    pre_form_answers: pre.remove(&s.session_id),
                    post_form_answers: post.remove(&s.session_id),
                }
            })
            .collect();
        Ok(ExperimentSnapshot {
            experiment: self.experiment.config.clone(),
            agents: self.experiment.agents.clone(),
            forms: self.experiment.forms.clone(),
            participants,
            sessions,
        })
    }

    pub fn to_json(&self) -> Result<String, ExportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(json: &str) -> Result<Self, ExportError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn row_count(&self, table: Table) -> usize {
        match table {
            Table::Participants => self.participants.len(),
            Table::Sessions => self.sessions.len(),
            Table::Messages => self.messages.len(),
            Table::Responses => self.responses.len(),
        }
    }

    /// Dataset-key columns of the responses table, in documented order.
    pub fn response_columns(&self) -> Vec<String> {
        let config = &self.experiment.config;
        let form = |id| self.experiment.forms.iter().find(|f| Some(f.id) == id);
        let mut columns: IndexSet<String> = IndexSet::new();
        for (phase, id) in [
            (Phase::Registration, config.forms.registration),
            (Phase::Before, config.forms.before_conversation),
            (Phase::After, config.forms.after_conversation),
        ] {
            if let Some(f) = form(id) {
                columns.extend(f.questions.iter().map(|q| dataset_key(&q.key, phase)));
            }
        }
        let mut rest: Vec<&String> = self
            .responses
            .iter()
            .flat_map(|r| r.answers.keys())
            .filter(|k| !columns.contains(*k))
            .collect();
        rest.sort();
        rest.dedup();
        columns.extend(rest.into_iter().cloned());
        columns.into_iter().collect()
    }

    pub fn to_csv(&self, table: Table) -> Result<String, ExportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ts = |t: &DateTime<Utc>| t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true);
        let opt = |v: Option<String>| v.unwrap_or_default();
        match table {
            Table::Participants => {
                w.write_record([
                    "experiment_id",
                    "username",
                    "condition",
                    "condition_label",
                    "age",
                    "gender",
                    "registered_at",
                    "session_count",
                ])?;
                for p in &self.participants {
                    w.write_record([
                        p.experiment_id.to_string(),
                        p.username.clone(),
                        p.condition.to_string(),
                        p.condition_label.clone(),
                        opt(p.age.map(|a| a.to_string())),
                        opt(p.gender.clone()),
                        ts(&p.registered_at),
                        p.session_count.to_string(),
                    ])?;
                }
            }
            Table::Sessions => {
                w.write_record([
                    "experiment_id",
                    "username",
                    "condition",
                    "session_id",
                    "started_at",
                    "finished_at",
                    "user_message_count",
                    "agent_message_count",
                ])?;
                for s in &self.sessions {
                    w.write_record([
                        s.experiment_id.to_string(),
                        s.username.clone(),
                        s.condition.to_string(),
                        s.session_id.to_string(),
                        ts(&s.started_at),
                        opt(s.finished_at.as_ref().map(ts)),
                        s.user_message_count.to_string(),
                        s.agent_message_count.to_string(),
                    ])?;
                }
            }
            Table::Messages => {
                w.write_record([
                    "experiment_id",
                    "username",
                    "condition",
                    "session_id",
                    "message_id",
                    "position",
                    "author",
                    "text",
                    "sent_at",
                    "annotation",
                    "delivery",
                ])?;
                for m in &self.messages {
                    w.write_record([
                        m.experiment_id.to_string(),
                        m.username.clone(),
                        m.condition.to_string(),
                        m.session_id.to_string(),
                        m.message_id.to_string(),
                        m.position.to_string(),
                        m.author.as_str().to_owned(),
                        m.text.clone(),
                        ts(&m.sent_at),
                        opt(m.annotation.map(|a| a.value().to_string())),
                        m.delivery.as_str().to_owned(),
                    ])?;
                }
            }
            Table::Responses => {
                let keys = self.response_columns();
                let fixed = ["experiment_id", "username", "condition", "session_id", "phase", "submitted_at"];
                w.write_record(fixed.iter().map(|s| s.to_string()).chain(keys.iter().cloned()))?;
                for r in &self.responses {
                    let mut record = vec![
                        r.experiment_id.to_string(),
                        r.username.clone(),
                        r.condition.to_string(),
                        opt(r.session_id.map(|s| s.to_string())),
                        r.phase.as_str().to_owned(),
                        ts(&r.submitted_at),
                    ];
                    record.extend(keys.iter().map(|k| match r.answers.get(k) {
                        None | Some(Value::Null) => String::new(),
                        Some(Value::String(s)) => s.clone(),
                        Some(other) => other.to_string(),
                    }));
                    w.write_record(record)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| ExportError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes the bundle into `dir` and returns the written paths.
    pub fn write_to_dir(&self, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>, ExportError> {
        std::fs::create_dir_all(dir)?;
        let id = self.experiment.config.id;
        let mut written = Vec::new();
        match format {
            ExportFormat::Json => {
                let path = dir.join(json_file_name(id));
                std::fs::write(&path, self.to_json()?)?;
                written.push(path);
            }
            ExportFormat::Csv => {
                for table in Table::ALL {
                    let path = dir.join(table.file_name(id));
                    std::fs::write(&path, self.to_csv(table)?)?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    }
}
