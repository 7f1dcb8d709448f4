//! The experiment lifecycle: admin configuration plus every participant
//! operation, composed from allocation, forms, agent runtime and store.
//!
//! Participant operations are addressed by `(experiment_id, username)`;
//! authenticating that pair is the caller's job. Nothing returned by a
//! participant operation carries an agent id or condition label, except the
//! substituted post-interaction URL.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, ChunkSink, RetryPolicy};
use crate::allocation::{check_message_quota, Admission, AdmissionControl, BeginError, Quota, QuotaError, RejectReason};
use crate::export::{ExportBundle, ExportError};
use crate::forms::{self, prefix_answers, ui_schema, validate_form_definition, validate_response, FormDefinition, Phase, UiFormSchema};
use crate::model::{
    validate_agent, validate_experiment, AgentConfig, AgentId, Annotation, Answers, Author, Boundaries,
    ConversationSession, Delivery, ExperimentConfig, ExperimentId, ExperimentStatus, Features, FormId, MainPage,
    MessageId, MessageRecord, ParticipantRecord, SessionId, Violation,
};
use crate::provider::ChatProvider;
use crate::store::{ExperimentSummary, Store, StoreError};

pub const MAX_USERNAME_LEN: usize = 64;
pub const MAX_MESSAGE_LEN: usize = 8000;

/// Shown in place of an agent reply when the provider failed outright.
pub const ERROR_NOTICE: &str = "The agent could not respond just now. Please send your message again.";

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid input")]
    Invalid(Vec<Violation>),
    #[error("{0}")]
    Rejected(RejectReason),
    #[error("experiment inactive")]
    Inactive,
    #[error("quota exceeded")]
    QuotaExceeded,
    #[error("a reply is already being generated for this session")]
    Busy,
    #[error("not your {0}")]
    Forbidden(&'static str),
    #[error("{0}")]
    FeatureDisabled(&'static str),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Store(StoreError),
}

impl PlatformError {
    fn invalid(field: impl Into<String>, rule: impl Into<String>) -> Self {
        PlatformError::Invalid(vec![Violation::new(field, rule)])
    }
}

impl From<StoreError> for PlatformError {
    fn from(e: StoreError) -> Self {
        use StoreError::*;
        match e {
            UnknownExperiment(_) => PlatformError::NotFound("experiment".into()),
            UnknownAgent(_) => PlatformError::NotFound("agent".into()),
            UnknownForm(_) => PlatformError::NotFound("form".into()),
            UnknownSession(_) => PlatformError::NotFound("session".into()),
            UnknownMessage(_) => PlatformError::NotFound("message".into()),
            UnknownParticipant(_) => PlatformError::NotFound("participant".into()),
            UsernameTaken => PlatformError::Rejected(RejectReason::UsernameTaken),
            SessionClosed => PlatformError::Conflict("session is finished".into()),
            NotAgentMessage => PlatformError::invalid("message_id", "only agent messages can be annotated"),
            InUse(what) => PlatformError::Conflict(what),
            other => PlatformError::Store(other),
        }
    }
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;

/// What a participant sees before registering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicInfo {
    pub title: String,
    pub description: String,
    pub main_page: MainPage,
    pub features: Features,
    pub collect_age: bool,
    pub collect_gender: bool,
    pub registration_form: Option<UiFormSchema>,
    pub before_form: Option<UiFormSchema>,
    pub after_form: Option<UiFormSchema>,
    pub max_messages_per_interaction: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub username: String,
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub answers: Answers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionBrief {
    pub session_id: SessionId,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub user_message_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub username: String,
    pub registered_at: DateTime<Utc>,
    pub sessions: Vec<SessionBrief>,
    /// Whether another conversation may be started.
    pub can_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationView {
    pub session_id: SessionId,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub messages: Vec<MessageRecord>,
    pub features: Features,
    /// The message quota is used up; only finishing is possible.
    pub must_finish: bool,
}

impl ConversationView {
    fn new(session: ConversationSession, config: &ExperimentConfig) -> Self {
        let must_finish = matches!(
            check_message_quota(&config.boundaries, &session),
            Ok(Quota::Denied) | Err(QuotaError::SessionFinished)
        );
        Self {
            session_id: session.id,
            started_at: session.started_at,
            finished_at: session.finished_at,
            messages: session.messages,
            features: config.features,
            must_finish,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SendOutcome {
    pub user_message: MessageRecord,
    pub reply: MessageRecord,
    /// The message quota is reached: the client must start the finish flow.
    pub force_finish: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinishOutcome {
    pub text: String,
    pub survey_url: Option<String>,
    /// The session had already been finished; nothing was changed.
    pub already_finished: bool,
}

/// Characters left intact when substituting into a survey URL.
const URL_VALUE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

/// Substitutes `{username}`, `{session}` and `{condition}`, percent-encoding
/// each value.
pub fn render_survey_url(template: &str, username: &str, session: SessionId, condition: &str) -> String {
    let enc = |v: &str| utf8_percent_encode(v, URL_VALUE).to_string();
    template
        .replace("{username}", &enc(username))
        .replace("{session}", &enc(&session.to_string()))
        .replace("{condition}", &enc(condition))
}

/// Removes a session from the in-flight set when a generation ends, however
/// it ends.
struct InFlight<'a> {
    set: &'a Mutex<HashSet<SessionId>>,
    id: SessionId,
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.set.lock().remove(&self.id);
    }
}

pub struct Platform {
    store: Store,
    admission: AdmissionControl,
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    in_flight: Mutex<HashSet<SessionId>>,
}

impl Platform {
    /// Wraps a store, rebuilding admission counters from its contents.
    pub fn new(store: Store, provider: Arc<dyn ChatProvider>, seed: u64) -> Self {
        let admission = AdmissionControl::new(seed);
        for exp in store.experiments() {
            let mut started: HashMap<String, u64> = HashMap::new();
            for s in store.sessions(exp.id) {
                *started.entry(s.username).or_default() += 1;
            }
            for p in store.participants(exp.id) {
                let n = started.get(&p.username).copied().unwrap_or(0);
                admission.restore(exp.id, &p.username, p.condition_agent_id, n);
            }
        }
        Self {
            store,
            admission,
            provider,
            retry: RetryPolicy::default(),
            in_flight: Mutex::new(HashSet::new()),
        }
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn admission(&self) -> &AdmissionControl {
        &self.admission
    }

    // ---- admin: agents -------------------------------------------------

    pub fn agents(&self) -> Vec<AgentConfig> {
        self.store.agents()
    }

    pub fn agent(&self, id: AgentId) -> Result<AgentConfig> {
        Ok(self.store.agent(id)?)
    }

    /// Stores a new agent under a fresh id.
    pub fn create_agent(&self, mut agent: AgentConfig) -> Result<AgentConfig> {
        agent.id = AgentId::random();
        validate_agent(&agent).map_err(PlatformError::Invalid)?;
        self.store.put_agent(agent.clone())?;
        Ok(agent)
    }

    pub fn update_agent(&self, id: AgentId, mut agent: AgentConfig) -> Result<AgentConfig> {
        self.store.agent(id)?;
        agent.id = id;
        validate_agent(&agent).map_err(PlatformError::Invalid)?;
        self.store.put_agent(agent.clone())?;
        Ok(agent)
    }

    pub fn delete_agent(&self, id: AgentId) -> Result<()> {
        Ok(self.store.delete_agent(id)?)
    }

    // ---- admin: forms --------------------------------------------------

    pub fn forms(&self) -> Vec<FormDefinition> {
        self.store.forms()
    }

    pub fn form(&self, id: FormId) -> Result<FormDefinition> {
        Ok(self.store.form(id)?)
    }

    pub fn create_form(&self, mut form: FormDefinition) -> Result<FormDefinition> {
        form.id = FormId::random();
        validate_form_definition(&form).map_err(PlatformError::Invalid)?;
        self.store.put_form(form.clone())?;
        Ok(form)
    }

    pub fn update_form(&self, id: FormId, mut form: FormDefinition) -> Result<FormDefinition> {
        self.store.form(id)?;
        form.id = id;
        validate_form_definition(&form).map_err(PlatformError::Invalid)?;
        self.store.put_form(form.clone())?;
        Ok(form)
    }

    pub fn delete_form(&self, id: FormId) -> Result<()> {
        Ok(self.store.delete_form(id)?)
    }

    pub fn form_templates(&self) -> Vec<FormDefinition> {
        forms::templates::all()
    }

    // ---- admin: experiments --------------------------------------------

    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        self.store.experiments()
    }

    pub fn experiment(&self, id: ExperimentId) -> Result<ExperimentConfig> {
        Ok(self.store.experiment(id)?)
    }

    fn validate(&self, config: &ExperimentConfig) -> Result<Vec<Violation>> {
        let agents: HashSet<AgentId> = self.store.agents().iter().map(|a| a.id).collect();
        let forms: HashSet<FormId> = self.store.forms().iter().map(|f| f.id).collect();
        validate_experiment(config, &agents, &forms).map_err(PlatformError::Invalid)
    }

    /// Creates an experiment under a fresh id, launched now. Returns the
    /// stored config and any validation warnings.
    pub fn create_experiment(&self, mut config: ExperimentConfig) -> Result<(ExperimentConfig, Vec<Violation>)> {
        config.id = ExperimentId::random();
        config.launch_date = Utc::now();
        if config.main_page != MainPage::default() {
            config.main_page.updated_at = Some(config.launch_date);
        }
        let warnings = self.validate(&config)?;
        self.store.put_experiment(config.clone())?;
        Ok((config, warnings))
    }

    /// Replaces an experiment's configuration. `id`, `launch_date` and
    /// `status` are kept; the condition list is frozen once anyone has
    /// registered.
    pub fn update_experiment(&self, id: ExperimentId, mut config: ExperimentConfig) -> Result<(ExperimentConfig, Vec<Violation>)> {
        self.admission.with_experiment_locked(id, || {
            let current = self.store.experiment(id)?;
            config.id = id;
            config.launch_date = current.launch_date;
            config.status = current.status;
            if config.agents != current.agents && !self.store.participants(id).is_empty() {
                return Err(PlatformError::Conflict(
                    "conditions cannot change after participants have registered".into(),
                ));
            }
            if (&config.main_page.title, &config.main_page.body) != (&current.main_page.title, &current.main_page.body) {
                config.main_page.updated_at = Some(Utc::now());
                tracing::info!(experiment = %id, "main page content changed");
            } else {
                config.main_page.updated_at = current.main_page.updated_at;
            }
            let warnings = self.validate(&config)?;
            self.store.put_experiment(config.clone())?;
            Ok((config, warnings))
        })
    }

    /// Activates or deactivates an experiment. Ordered with respect to
    /// admissions: no registration completes after deactivation returns.
    pub fn set_status(&self, id: ExperimentId, status: ExperimentStatus) -> Result<ExperimentConfig> {
        self.admission.with_experiment_locked(id, || {
            let mut config = self.store.experiment(id)?;
            config.status = status;
            if status == ExperimentStatus::Active {
                self.validate(&config)?;
            }
            self.store.put_experiment(config.clone())?;
            tracing::info!(experiment = %id, ?status, "status changed");
            Ok(config)
        })
    }

    pub fn summary(&self, id: ExperimentId) -> Result<ExperimentSummary> {
        Ok(self.store.summarize_experiment(id)?)
    }

    /// Works regardless of status.
    pub fn export(&self, id: ExperimentId) -> Result<ExportBundle> {
        let snapshot = self.store.snapshot(id)?;
        Ok(ExportBundle::from_snapshot(&snapshot)?)
    }

    /// Loads an exported experiment into this instance, keeping its ids.
    pub fn import(&self, bundle: &ExportBundle) -> Result<ExperimentId> {
        let snapshot = bundle.to_snapshot()?;
        let id = snapshot.experiment.id;
        if self.store.experiment(id).is_ok() {
            return Err(PlatformError::Conflict(format!("experiment {id} already exists")));
        }
        self.store.import_snapshot(&snapshot)?;
        let mut started: HashMap<&str, u64> = HashMap::new();
        for s in &snapshot.sessions {
            *started.entry(&s.username).or_default() += 1;
        }
        for p in &snapshot.participants {
            let n = started.get(p.username.as_str()).copied().unwrap_or(0);
            self.admission.restore(id, &p.username, p.condition_agent_id, n);
        }
        Ok(id)
    }

    pub fn close_stale_sessions(&self, max_age: chrono::Duration) -> Result<usize> {
        Ok(self.store.close_stale_sessions(max_age, Utc::now())?)
    }

    // ---- participants --------------------------------------------------

    fn active(&self, id: ExperimentId) -> Result<ExperimentConfig> {
        let config = self.store.experiment(id)?;
        if config.is_active() {
            Ok(config)
        } else {
            Err(PlatformError::Inactive)
        }
    }

    fn linked_form(&self, id: Option<FormId>) -> Result<Option<FormDefinition>> {
        Ok(match id {
            Some(id) => Some(self.store.form(id)?),
            None => None,
        })
    }

    /// Validates answers for a phase and returns them under dataset keys.
    /// `None` when no form is linked and nothing was submitted.
    fn phase_answers(&self, form: Option<FormId>, phase: Phase, answers: Option<&Answers>) -> Result<Option<Answers>> {
        match (self.linked_form(form)?, answers) {
            (Some(form), answers) => {
                let empty = Answers::new();
                let normalized = validate_response(&form, answers.unwrap_or(&empty)).map_err(PlatformError::Invalid)?;
                Ok(Some(prefix_answers(&normalized, phase)))
            }
            (None, Some(a)) if !a.is_empty() => Err(PlatformError::invalid("answers", format!("no {} form is linked", phase.as_str()))),
            (None, _) => Ok(None),
        }
    }

    pub fn public_info(&self, id: ExperimentId) -> Result<PublicInfo> {
        let config = self.active(id)?;
        let schema = |form| -> Result<Option<UiFormSchema>> { Ok(self.linked_form(form)?.as_ref().map(ui_schema)) };
        Ok(PublicInfo {
            title: config.title.clone(),
            description: config.description.clone(),
            main_page: config.main_page.clone(),
            features: config.features,
            collect_age: config.collect_age,
            collect_gender: config.collect_gender,
            registration_form: schema(config.forms.registration)?,
            before_form: schema(config.forms.before_conversation)?,
            after_form: schema(config.forms.after_conversation)?,
            max_messages_per_interaction: config.boundaries.max_messages_per_interaction,
        })
    }

    /// Validates, admits and stores a new participant.
    pub fn register(&self, id: ExperimentId, registration: Registration) -> Result<()> {
        let config = self.active(id)?;
        let username = registration.username.trim().to_owned();
        let mut problems = Vec::new();
        if username.is_empty() {
            problems.push(Violation::new("username", "required"));
        } else if username.chars().count() > MAX_USERNAME_LEN {
            problems.push(Violation::new("username", format!("at most {MAX_USERNAME_LEN} characters")));
        }
        if let Some(age) = registration.age.filter(|_| config.collect_age) {
            if !(1..=150).contains(&age) {
                problems.push(Violation::new("age", "out of range"));
            }
        }
        let answers = match self.phase_answers(config.forms.registration, Phase::Registration, Some(&registration.answers)) {
            Ok(a) => a,
            Err(PlatformError::Invalid(v)) => {
                problems.extend(v);
                None
            }
            Err(e) => return Err(e),
        };
        if !problems.is_empty() {
            return Err(PlatformError::Invalid(problems));
        }
        let record = |condition_agent_id| ParticipantRecord {
            username: username.clone(),
            experiment_id: id,
            condition_agent_id,
            age: registration.age.filter(|_| config.collect_age),
            gender: registration
                .gender
                .clone()
                .filter(|g| config.collect_gender && !g.trim().is_empty()),
            registration_answers: answers.clone(),
            registered_at: Utc::now(),
        };
        let admission = self.admission.admit_participant(&config, &username, |agent_id| {
            // runs under the experiment lock, so a concurrent deactivation
            // is either fully before or fully after this admission
            if !self.store.experiment(id)?.is_active() {
                return Err(PlatformError::Inactive);
            }
            self.store.create_participant(record(agent_id)).map_err(PlatformError::from)
        })?;
        match admission {
            Admission::Admitted(_) => Ok(()),
            Admission::Rejected(RejectReason::ExperimentInactive) => Err(PlatformError::Inactive),
            Admission::Rejected(reason) => Err(PlatformError::Rejected(reason)),
        }
    }

    fn participant(&self, id: ExperimentId, username: &str) -> Result<ParticipantRecord> {
        self.store
            .participant(id, username)
            .ok_or_else(|| PlatformError::NotFound("participant".into()))
    }

    /// Returning-participant login: succeeds iff the username is registered.
    pub fn login(&self, id: ExperimentId, username: &str) -> Result<()> {
        self.active(id)?;
        self.participant(id, username.trim()).map(|_| ())
    }

    pub fn participant_view(&self, id: ExperimentId, username: &str) -> Result<ParticipantView> {
        let config = self.active(id)?;
        let p = self.participant(id, username)?;
        let sessions = self
            .store
            .sessions(id)
            .into_iter()
            .filter(|s| s.username == username)
            .map(|s| SessionBrief {
                session_id: s.id,
                started_at: s.started_at,
                finished_at: s.finished_at,
                user_message_count: s.user_message_count(),
            })
            .collect();
        let can_start = self.admission.check_conversation_quota(&config, username) == Ok(Quota::Allowed);
        Ok(ParticipantView {
            username: p.username,
            registered_at: p.registered_at,
            sessions,
            can_start,
        })
    }

    /// Opens a session with the condition agent's opener.
    pub fn start_conversation(&self, id: ExperimentId, username: &str, pre_answers: Option<Answers>) -> Result<ConversationView> {
        let config = self.active(id)?;
        let participant = self.participant(id, username)?;
        let agent = self.store.agent(participant.condition_agent_id)?;
        let pre = self.phase_answers(config.forms.before_conversation, Phase::Before, pre_answers.as_ref())?;
        let session_id = SessionId::random();
        let begun = self.admission.begin_conversation(&config, username, || {
            self.store.create_session(ConversationSession {
                id: session_id,
                username: username.to_owned(),
                experiment_id: id,
                agent_id: agent.id,
                started_at: Utc::now(),
                finished_at: None,
                messages: Vec::new(),
                pre_form_answers: pre,
                post_form_answers: None,
            })?;
            self.store.append_message(session_id, agent::first_message(&agent))
        });
        match begun {
            Ok(Ok(_)) => {}
            Ok(Err(_)) => return Err(PlatformError::QuotaExceeded),
            Err(BeginError::Quota(_)) => return Err(PlatformError::NotFound("participant".into())),
            Err(BeginError::Inner(e)) => return Err(e.into()),
        }
        Ok(ConversationView::new(self.store.session(session_id)?, &config))
    }

    fn owned_session(&self, id: ExperimentId, username: &str, session_id: SessionId) -> Result<ConversationSession> {
        let session = self.store.session(session_id)?;
        if session.experiment_id != id || session.username != username {
            return Err(PlatformError::Forbidden("session"));
        }
        Ok(session)
    }

    pub fn conversation(&self, id: ExperimentId, username: &str, session_id: SessionId) -> Result<ConversationView> {
        let config = self.active(id)?;
        let session = self.owned_session(id, username, session_id)?;
        Ok(ConversationView::new(session, &config))
    }

    /// Stores the participant's message and exactly one agent message: the
    /// reply, a partial reply, or an error notice. Streams into `sink` when
    /// one is given and the experiment streams.
    pub async fn send_message(
        &self,
        id: ExperimentId,
        username: &str,
        session_id: SessionId,
        text: &str,
        sink: Option<&mut dyn ChunkSink>,
    ) -> Result<SendOutcome> {
        let config = self.active(id)?;
        self.owned_session(id, username, session_id)?;
        if text.trim().is_empty() {
            return Err(PlatformError::invalid("text", "required"));
        }
        if text.chars().count() > MAX_MESSAGE_LEN {
            return Err(PlatformError::invalid("text", format!("at most {MAX_MESSAGE_LEN} characters")));
        }
        if !self.in_flight.lock().insert(session_id) {
            return Err(PlatformError::Busy);
        }
        let _guard = InFlight {
            set: &self.in_flight,
            id: session_id,
        };

        let session = self.store.session(session_id)?;
        let quota = match check_message_quota(&config.boundaries, &session) {
            Ok(Quota::Denied) => return Err(PlatformError::QuotaExceeded),
            Ok(q) => q,
            Err(_) => return Err(PlatformError::Conflict("session is finished".into())),
        };
        let agent = self.store.agent(session.agent_id)?;
        let request = agent::assemble_request(&agent, &agent::provider_history(&session.messages), text);
        let user_message = self.store.append_message(session_id, MessageRecord::draft(Author::User, text))?;

        let reply = match sink {
            Some(sink) if config.features.stream_message => {
                agent::stream_reply(&request, self.provider.as_ref(), &self.retry, sink).await
            }
            _ => agent::generate_reply(&request, self.provider.as_ref(), &self.retry).await,
        };
        let draft = match &reply.error {
            None => MessageRecord::draft(Author::Agent, reply.content),
            Some(e) => {
                tracing::warn!(session = %session_id, error = %e, "provider failed");
                if reply.content.is_empty() {
                    MessageRecord::draft(Author::Agent, ERROR_NOTICE).with_delivery(Delivery::Error)
                } else {
                    MessageRecord::draft(Author::Agent, reply.content).with_delivery(Delivery::Partial)
                }
            }
        };
        let reply = self.store.append_message(session_id, draft)?;
        Ok(SendOutcome {
            user_message,
            reply,
            force_finish: quota == Quota::LastMessage,
        })
    }

    pub fn annotate(&self, id: ExperimentId, username: &str, message_id: MessageId, value: i64) -> Result<MessageRecord> {
        let config = self.active(id)?;
        if !config.features.user_annotation {
            return Err(PlatformError::FeatureDisabled("annotation disabled"));
        }
        let annotation = Annotation::try_from(value).map_err(|_| PlatformError::invalid("value", "must be 1 or -1"))?;
        let (_, session) = self.store.message(message_id)?;
        if session.experiment_id != id || session.username != username {
            return Err(PlatformError::Forbidden("message"));
        }
        self.store.set_annotation(message_id, annotation)?;
        Ok(self.store.message(message_id)?.0)
    }

    /// Stores the after-conversation answers and closes the session. A
    /// second call changes nothing and returns the same message.
    pub fn finish_conversation(
        &self,
        id: ExperimentId,
        username: &str,
        session_id: SessionId,
        post_answers: Option<Answers>,
    ) -> Result<FinishOutcome> {
        let config = self.active(id)?;
        let session = self.owned_session(id, username, session_id)?;
        let finished = if session.is_open() {
            let post = self.phase_answers(config.forms.after_conversation, Phase::After, post_answers.as_ref())?;
            self.store.finish_session(session_id, post)?
        } else {
            false
        };
        let condition = config.condition_label(session.agent_id).unwrap_or_default();
        let pim = &config.post_interaction_message;
        Ok(FinishOutcome {
            text: pim.text.clone(),
            survey_url: pim
                .survey_url_template
                .as_deref()
                .filter(|t| !t.is_empty())
                .map(|t| render_survey_url(t, username, session_id, &condition)),
            already_finished: !finished,
        })
    }
}

/// Experiment with everything but identity and lifecycle fields, as an
/// admin submits it.
pub fn blank_experiment(title: &str, agents: &[(AgentId, u8)]) -> ExperimentConfig {
    ExperimentConfig {
        id: ExperimentId::random(),
        title: title.to_owned(),
        description: String::new(),
        agents: agents
            .iter()
            .map(|&(agent_id, weight_percent)| crate::model::AgentWeight { agent_id, weight_percent })
            .collect(),
        features: Features::default(),
        forms: Default::default(),
        boundaries: Boundaries::default(),
        status: ExperimentStatus::Active,
        launch_date: Utc::now(),
        main_page: MainPage::default(),
        post_interaction_message: Default::default(),
        collect_age: true,
        collect_gender: true,
    }
}
