//! Persistent domain types shared by every other module.
//!
//! Every type serializes to a JSON object whose field names are the
//! snake_case names used here; those names are also the export schema.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Uuid);

        impl $name {
            pub fn random() -> Self {
                Self(Uuid::new_v4())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = uuid::Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Uuid::parse_str(s).map(Self)
            }
        }
    };
}

id_type!(
    /// Identifier of an [`ExperimentConfig`].
    ExperimentId
);
id_type!(
    /// Identifier of an [`AgentConfig`].
    AgentId
);
id_type!(
    /// Identifier of a form definition.
    FormId
);
impl ExperimentId {
    /// URL-safe form used in experiment addresses: unpadded base64url of the
    /// 16 id bytes (22 characters).
    pub fn slug(&self) -> String {
        URL_SAFE_NO_PAD.encode(self.0.as_bytes())
    }

    pub fn from_slug(slug: &str) -> Option<Self> {
        let bytes = URL_SAFE_NO_PAD.decode(slug).ok()?;
        Uuid::from_slice(&bytes).ok().map(Self)
    }
}

id_type!(SessionId);
id_type!(MessageId);

/// Questionnaire answers keyed by question key (or dataset key once prefixed).
pub type Answers = BTreeMap<String, serde_json::Value>;

/// One rule broken by a candidate value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    Active,
    Inactive,
}

/// One condition of a study and its allocation weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentWeight {
    pub agent_id: AgentId,
    pub weight_percent: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    #[serde(default)]
    pub stream_message: bool,
    #[serde(default)]
    pub user_annotation: bool,
}

/// Questionnaires attached to the three phases of participation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedForms {
    #[serde(default)]
    pub registration: Option<FormId>,
    #[serde(default)]
    pub before_conversation: Option<FormId>,
    #[serde(default)]
    pub after_conversation: Option<FormId>,
}

impl LinkedForms {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, FormId)> + '_ {
        [
            ("forms.registration", self.registration),
            ("forms.before_conversation", self.before_conversation),
            ("forms.after_conversation", self.after_conversation),
        ]
        .into_iter()
        .filter_map(|(field, id)| id.map(|id| (field, id)))
    }
}

/// Hard quotas. `None` means unlimited.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundaries {
    #[serde(default)]
    pub max_participants: Option<u32>,
    #[serde(default)]
    pub max_conversations_per_participant: Option<u32>,
    #[serde(default)]
    pub max_messages_per_interaction: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainPage {
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub updated_at: Option<DateTime<Utc>>,
}

/// Text shown after a session is finished, optionally pointing to an
/// external survey. The template may contain `{username}`, `{session}`
/// and `{condition}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostInteractionMessage {
    pub text: String,
    #[serde(default)]
    pub survey_url_template: Option<String>,
}

impl Default for PostInteractionMessage {
    fn default() -> Self {
        Self {
            text: "Thank you for participating!".to_owned(),
            survey_url_template: None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub agents: Vec<AgentWeight>,
    #[serde(default)]
    pub features: Features,
    #[serde(default)]
    pub forms: LinkedForms,
    #[serde(default)]
    pub boundaries: Boundaries,
    pub status: ExperimentStatus,
    pub launch_date: DateTime<Utc>,
    #[serde(default)]
    pub main_page: MainPage,
    #[serde(default)]
    pub post_interaction_message: PostInteractionMessage,
    /// Whether registration asks for age.
    #[serde(default = "yes")]
    pub collect_age: bool,
    #[serde(default = "yes")]
    pub collect_gender: bool,
}

impl ExperimentConfig {
    pub fn is_active(&self) -> bool {
        self.status == ExperimentStatus::Active
    }

    /// Blinded condition label ("A", "B") of an agent within this study.
    pub fn condition_label(&self, agent_id: AgentId) -> Option<String> {
        self.agents
            .iter()
            .position(|a| a.agent_id == agent_id)
            .map(|i| char::from(b'A' + i as u8).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    #[serde(default)]
    pub frequency_penalty: f64,
    #[serde(default)]
    pub presence_penalty: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 256,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            stop_sequences: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub id: AgentId,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub model_id: String,
    pub first_chat_sentence: String,
    pub system_starter_prompt: String,
    #[serde(default)]
    pub before_user_sentence_prompt: String,
    #[serde(default)]
    pub after_user_sentence_prompt: String,
    #[serde(default)]
    pub sampling: SamplingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub username: String,
    pub experiment_id: ExperimentId,
    pub condition_agent_id: AgentId,
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: Option<String>,
    /// `Some` once a registration form was submitted.
    #[serde(default)]
    pub registration_answers: Option<Answers>,
    pub registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Agent,
    User,
}

impl Author {
    pub fn as_str(self) -> &'static str {
        match self {
            Author::Agent => "agent",
            Author::User => "user",
        }
    }
}

/// How an agent message came to be. User messages are always `Complete`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    #[default]
    Complete,
    /// A streamed reply cut off by a provider failure.
    Partial,
    /// A notice stored in place of a reply the provider failed to produce.
    Error,
}

impl Delivery {
    pub fn as_str(self) -> &'static str {
        match self {
            Delivery::Complete => "complete",
            Delivery::Partial => "partial",
            Delivery::Error => "error",
        }
    }
}

/// A like (+1) or dislike (-1) on an agent message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Annotation {
    Like,
    Dislike,
}

impl Annotation {
    pub fn value(self) -> i64 {
        match self {
            Annotation::Like => 1,
            Annotation::Dislike => -1,
        }
    }
}

impl TryFrom<i64> for Annotation {
    type Error = String;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Annotation::Like),
            -1 => Ok(Annotation::Dislike),
            other => Err(format!("annotation must be 1 or -1, got {other}")),
        }
    }
}

impl From<Annotation> for i64 {
    fn from(a: Annotation) -> i64 {
        a.value()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub id: MessageId,
    pub session_id: SessionId,
    /// 1-based position within the session.
    pub position: u32,
    pub author: Author,
    pub text: String,
    pub sent_at: DateTime<Utc>,
    #[serde(default)]
    pub annotation: Option<Annotation>,
    #[serde(default)]
    pub delivery: Delivery,
}

impl MessageRecord {
    /// A message not yet stored: position and timestamp are assigned on append.
    pub fn draft(author: Author, text: impl Into<String>) -> Self {
        Self {
            id: MessageId::random(),
            session_id: SessionId(Uuid::nil()),
            position: 0,
            author,
            text: text.into(),
            sent_at: Utc::now(),
            annotation: None,
            delivery: Delivery::Complete,
        }
    }

    pub fn with_delivery(mut self, delivery: Delivery) -> Self {
        self.delivery = delivery;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSession {
    pub id: SessionId,
    pub username: String,
    pub experiment_id: ExperimentId,
    pub agent_id: AgentId,
    pub started_at: DateTime<Utc>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub messages: Vec<MessageRecord>,
    /// Before-conversation answers under `Pre_` dataset keys.
    #[serde(default)]
    pub pre_form_answers: Option<Answers>,
    /// After-conversation answers under `Post_` dataset keys.
    #[serde(default)]
    pub post_form_answers: Option<Answers>,
}

impl ConversationSession {
    pub fn is_open(&self) -> bool {
        self.finished_at.is_none()
    }

    pub fn user_message_count(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.author == Author::User)
            .count()
    }

    /// The author whose turn comes next.
    pub fn next_author(&self) -> Author {
        match self.messages.last() {
            None | Some(MessageRecord { author: Author::User, .. }) => Author::Agent,
            Some(_) => Author::User,
        }
    }

    /// Checks the opener and strict alternation rules over the whole log.
    pub fn check_roles(&self) -> Result<(), String> {
        check_role_sequence(self.messages.iter().map(|m| m.author))
    }
}

/// Agent first, then strict agent/user alternation.
pub fn check_role_sequence(authors: impl IntoIterator<Item = Author>) -> Result<(), String> {
    let mut expected = Author::Agent;
    for (i, author) in authors.into_iter().enumerate() {
        if author != expected {
            return Err(format!(
                "message {} is authored by {} but {} was expected",
                i + 1,
                author.as_str(),
                expected.as_str()
            ));
        }
        expected = match author {
            Author::Agent => Author::User,
            Author::User => Author::Agent,
        };
    }
    Ok(())
}

/// Checks every [`ExperimentConfig`] invariant against the known agents and
/// forms. On success returns non-fatal warnings (e.g. a zero weight).
pub fn validate_experiment(
    config: &ExperimentConfig,
    known_agents: &HashSet<AgentId>,
    known_forms: &HashSet<FormId>,
) -> Result<Vec<Violation>, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    if config.title.trim().is_empty() {
        violations.push(Violation::new("title", "required"));
    }
    if !(1..=2).contains(&config.agents.len()) {
        violations.push(Violation::new("agents", "must list 1 or 2 agents"));
    }
    let mut seen = HashSet::new();
    for (i, agent) in config.agents.iter().enumerate() {
        let field = format!("agents[{i}]");
        if !seen.insert(agent.agent_id) {
            violations.push(Violation::new(&field, "duplicate agent"));
        }
        if !known_agents.contains(&agent.agent_id) {
            violations.push(Violation::new(&field, format!("unknown agent {}", agent.agent_id)));
        }
        if agent.weight_percent > 100 {
            violations.push(Violation::new(&field, "weight must be within 0..=100"));
        } else if agent.weight_percent == 0 && config.agents.len() > 1 {
            warnings.push(Violation::new(&field, "weight 0 leaves this condition unused"));
        }
    }
    let total: u32 = config.agents.iter().map(|a| u32::from(a.weight_percent)).sum();
    if !config.agents.is_empty() && total != 100 {
        violations.push(Violation::new("agents", "weights must sum to 100"));
    }

    for (field, form_id) in config.forms.iter() {
        if !known_forms.contains(&form_id) {
            violations.push(Violation::new(field, format!("unknown form {form_id}")));
        }
    }

    let bounds = [
        ("boundaries.max_participants", config.boundaries.max_participants),
        (
            "boundaries.max_conversations_per_participant",
            config.boundaries.max_conversations_per_participant,
        ),
        (
            "boundaries.max_messages_per_interaction",
            config.boundaries.max_messages_per_interaction,
        ),
    ];
    for (field, bound) in bounds {
        if bound == Some(0) {
            violations.push(Violation::new(field, "must be at least 1 (or unlimited)"));
        }
    }

    if violations.is_empty() {
        Ok(warnings)
    } else {
        Err(violations)
    }
}

/// Checks [`AgentConfig`] and [`SamplingParams`] invariants.
pub fn validate_agent(config: &AgentConfig) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let required = [
        ("title", &config.title),
        ("model_id", &config.model_id),
        ("first_chat_sentence", &config.first_chat_sentence),
        ("system_starter_prompt", &config.system_starter_prompt),
    ];
    for (field, value) in required {
        if value.trim().is_empty() {
            violations.push(Violation::new(field, "required"));
        }
    }

    let s = &config.sampling;
    let in_closed = |v: f64, lo: f64, hi: f64| v.is_finite() && (lo..=hi).contains(&v);
    if !in_closed(s.temperature, 0.0, 2.0) {
        violations.push(Violation::new("sampling.temperature", "temperature outside [0,2]"));
    }
    if s.max_tokens == 0 {
        violations.push(Violation::new("sampling.max_tokens", "max_tokens must be positive"));
    }
    if !(s.top_p.is_finite() && s.top_p > 0.0 && s.top_p <= 1.0) {
        violations.push(Violation::new("sampling.top_p", "top_p outside (0,1]"));
    }
    if !in_closed(s.frequency_penalty, -2.0, 2.0) {
        violations.push(Violation::new(
            "sampling.frequency_penalty",
            "frequency_penalty outside [-2,2]",
        ));
    }
    if !in_closed(s.presence_penalty, -2.0, 2.0) {
        violations.push(Violation::new(
            "sampling.presence_penalty",
            "presence_penalty outside [-2,2]",
        ));
    }
    if s.stop_sequences.len() > 4 {
        violations.push(Violation::new("sampling.stop_sequences", "at most 4 stop sequences"));
    }
    if s.stop_sequences.iter().any(|seq| seq.is_empty()) {
        violations.push(Violation::new(
            "sampling.stop_sequences",
            "stop sequences must be non-empty",
        ));
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn agent(first: &str) -> AgentConfig {
        AgentConfig {
            id: AgentId::random(),
            title: "Neutral".into(),
            description: String::new(),
            model_id: "mock-1".into(),
            first_chat_sentence: first.into(),
            system_starter_prompt: "You are a helpful listener.".into(),
            before_user_sentence_prompt: String::new(),
            after_user_sentence_prompt: String::new(),
            sampling: SamplingParams::default(),
        }
    }

    pub(crate) fn experiment(weights: &[(AgentId, u8)]) -> ExperimentConfig {
        ExperimentConfig {
            id: ExperimentId::random(),
            title: "Mood study".into(),
            description: String::new(),
            agents: weights
                .iter()
                .map(|&(agent_id, weight_percent)| AgentWeight {
                    agent_id,
                    weight_percent,
                })
                .collect(),
            features: Features::default(),
            forms: LinkedForms::default(),
            boundaries: Boundaries::default(),
            status: ExperimentStatus::Active,
            launch_date: Utc::now(),
            main_page: MainPage::default(),
            post_interaction_message: PostInteractionMessage::default(),
            collect_age: true,
            collect_gender: true,
        }
    }

    fn rules(v: &[Violation]) -> Vec<&str> {
        v.iter().map(|v| v.rule.as_str()).collect()
    }

    #[test]
    fn fifty_fifty_with_known_ids_is_ok() {
        let (a, b) = (AgentId::random(), AgentId::random());
        let config = experiment(&[(a, 50), (b, 50)]);
        let known: HashSet<_> = [a, b].into();
        assert_eq!(validate_experiment(&config, &known, &HashSet::new()), Ok(vec![]));
    }

    #[test]
    fn single_agent_at_hundred_is_ok() {
        let a = AgentId::random();
        let config = experiment(&[(a, 100)]);
        assert!(validate_experiment(&config, &[a].into(), &HashSet::new()).is_ok());
    }

    #[test]
    fn weights_not_summing_to_hundred_are_rejected() {
        let (a, b) = (AgentId::random(), AgentId::random());
        let config = experiment(&[(a, 60), (b, 50)]);
        let err = validate_experiment(&config, &[a, b].into(), &HashSet::new()).unwrap_err();
        assert_eq!(rules(&err), ["weights must sum to 100"]);
    }

    #[test]
    fn zero_weight_is_allowed_with_warning() {
        let (a, b) = (AgentId::random(), AgentId::random());
        let config = experiment(&[(a, 100), (b, 0)]);
        let warnings = validate_experiment(&config, &[a, b].into(), &HashSet::new()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].field, "agents[1]");
    }

    #[test]
    fn structural_violations_are_all_reported() {
        let (a, b, c) = (AgentId::random(), AgentId::random(), AgentId::random());
        let mut config = experiment(&[(a, 30), (b, 30), (c, 40)]);
        config.forms.before_conversation = Some(FormId::random());
        config.boundaries.max_participants = Some(0);
        let err = validate_experiment(&config, &[a, b].into(), &HashSet::new()).unwrap_err();
        let rules = rules(&err);
        assert!(rules.contains(&"must list 1 or 2 agents"));
        assert!(rules.iter().any(|r| r.starts_with("unknown agent")));
        assert!(rules.iter().any(|r| r.starts_with("unknown form")));
        assert!(rules.contains(&"must be at least 1 (or unlimited)"));
        assert!(err.iter().any(|v| v.field == "forms.before_conversation"));

        let empty = experiment(&[]);
        assert!(rules_of(&empty).contains(&"must list 1 or 2 agents".to_owned()));
    }

    fn rules_of(config: &ExperimentConfig) -> Vec<String> {
        validate_experiment(config, &HashSet::new(), &HashSet::new())
            .unwrap_err()
            .into_iter()
            .map(|v| v.rule)
            .collect()
    }

    #[test]
    fn duplicate_agents_are_rejected() {
        let a = AgentId::random();
        let config = experiment(&[(a, 50), (a, 50)]);
        let err = validate_experiment(&config, &[a].into(), &HashSet::new()).unwrap_err();
        assert_eq!(rules(&err), ["duplicate agent"]);
    }

    #[test]
    fn mid_range_agent_is_ok() {
        let mut a = agent("Hello.");
        a.sampling.temperature = 0.7;
        a.sampling.top_p = 1.0;
        a.sampling.max_tokens = 256;
        assert_eq!(validate_agent(&a), Ok(()));
    }

    #[test]
    fn temperature_above_two_is_rejected() {
        let mut a = agent("Hello.");
        a.sampling.temperature = 2.5;
        let err = validate_agent(&a).unwrap_err();
        assert_eq!(rules(&err), ["temperature outside [0,2]"]);
    }

    #[test]
    fn empty_first_sentence_is_rejected() {
        let a = agent("  ");
        let err = validate_agent(&a).unwrap_err();
        assert_eq!(err, vec![Violation::new("first_chat_sentence", "required")]);
    }

    #[test]
    fn sampling_edges() {
        let mut a = agent("Hi");
        a.sampling.top_p = 0.0;
        a.sampling.max_tokens = 0;
        a.sampling.frequency_penalty = -2.01;
        a.sampling.presence_penalty = f64::NAN;
        a.sampling.stop_sequences = vec!["a".into(); 5];
        assert_eq!(validate_agent(&a).unwrap_err().len(), 5);

        a.sampling = SamplingParams {
            temperature: 0.0,
            max_tokens: 1,
            top_p: 1.0,
            frequency_penalty: 2.0,
            presence_penalty: -2.0,
            stop_sequences: vec!["\n".into(); 4],
        };
        assert_eq!(validate_agent(&a), Ok(()));
    }

    #[test]
    fn annotation_accepts_only_plus_minus_one() {
        assert_eq!(serde_json::to_string(&Annotation::Dislike).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Annotation>("1").unwrap(), Annotation::Like);
        assert!(serde_json::from_str::<Annotation>("0").is_err());
        assert!(serde_json::from_str::<Annotation>("2").is_err());
    }

    #[test]
    fn role_sequence_rules() {
        use Author::*;
        assert!(check_role_sequence([Agent, User, Agent]).is_ok());
        assert!(check_role_sequence([User]).is_err());
        assert!(check_role_sequence([Agent, Agent]).is_err());
        assert!(check_role_sequence([]).is_ok());
    }

    #[test]
    fn condition_labels_follow_agent_order() {
        let (a, b) = (AgentId::random(), AgentId::random());
        let config = experiment(&[(a, 50), (b, 50)]);
        assert_eq!(config.condition_label(a).as_deref(), Some("A"));
        assert_eq!(config.condition_label(b).as_deref(), Some("B"));
        assert_eq!(config.condition_label(AgentId::random()), None);
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ,.!?\n\"]{0,24}"
    }

    prop_compose! {
        fn arb_message()(
            user in any::<bool>(),
            text in arb_text(),
            position in 1u32..500,
            secs in 0i64..4_000_000_000,
            annotation in prop::option::of(prop::bool::ANY),
            delivery in 0u8..3,
        ) -> MessageRecord {
            MessageRecord {
                id: MessageId::random(),
                session_id: SessionId::random(),
                position,
                author: if user { Author::User } else { Author::Agent },
                text,
                sent_at: DateTime::from_timestamp(secs, 0).unwrap(),
                annotation: annotation.map(|like| if like { Annotation::Like } else { Annotation::Dislike }),
                delivery: [Delivery::Complete, Delivery::Partial, Delivery::Error][delivery as usize],
            }
        }
    }

    prop_compose! {
        fn arb_sampling()(
            temperature in 0.0f64..2.0,
            max_tokens in 1u32..4096,
            top_p in 0.01f64..1.0,
            frequency_penalty in -2.0f64..2.0,
            presence_penalty in -2.0f64..2.0,
            stop_sequences in prop::collection::vec("[a-z]{1,4}", 0..4),
        ) -> SamplingParams {
            SamplingParams { temperature, max_tokens, top_p, frequency_penalty, presence_penalty, stop_sequences }
        }
    }

    proptest! {
        #[test]
        fn message_round_trips(m in arb_message()) {
            let json = serde_json::to_string(&m).unwrap();
            prop_assert_eq!(serde_json::from_str::<MessageRecord>(&json).unwrap(), m);
        }

        #[test]
        fn agent_round_trips(sampling in arb_sampling(), first in arb_text(), before in arb_text()) {
            let mut a = agent(&first);
            a.sampling = sampling;
            a.before_user_sentence_prompt = before;
            let json = serde_json::to_string(&a).unwrap();
            prop_assert_eq!(serde_json::from_str::<AgentConfig>(&json).unwrap(), a);
        }

        #[test]
        fn experiment_round_trips(w in 0u8..=100, two in any::<bool>(), max in prop::option::of(1u32..1000)) {
            let weights = if two {
                vec![(AgentId::random(), w), (AgentId::random(), 100 - w)]
            } else {
                vec![(AgentId::random(), 100)]
            };
            let mut config = experiment(&weights);
            config.boundaries.max_participants = max;
            config.post_interaction_message.survey_url_template = Some("https://x/?u={username}".into());
            let json = serde_json::to_string(&config).unwrap();
            prop_assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), config);
        }

        #[test]
        fn accepted_experiments_are_well_formed(weights in prop::collection::vec(0u8..=120, 0..4)) {
            let pairs: Vec<_> = weights.iter().map(|&w| (AgentId::random(), w)).collect();
            let known = pairs.iter().map(|p| p.0).collect();
            let config = experiment(&pairs);
            if validate_experiment(&config, &known, &HashSet::new()).is_ok() {
                prop_assert!((1..=2).contains(&config.agents.len()));
                prop_assert_eq!(config.agents.iter().map(|a| u32::from(a.weight_percent)).sum::<u32>(), 100);
            }
        }
    }
}
