//! What each synthetic participant does.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use parley_core::forms::{UiFormSchema, Widget};
use parley_core::Answers;

const WORDS: &[&str] = &[
    "hello", "today", "feel", "quite", "good", "tired", "work", "week", "maybe", "could", "you", "help",
    "me", "think", "about", "plans", "weekend", "friends", "music", "walk", "really", "not", "sure",
    "what", "to", "do", "thanks", "that", "sounds", "nice", "rain", "coffee", "late", "early",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantScript {
    /// `{i}` is replaced by the participant's index.
    #[serde(default = "default_pattern")]
    pub username_pattern: String,
    pub messages: MessagePlan,
    #[serde(default)]
    pub annotation: AnnotationPolicy,
    #[serde(default)]
    pub forms: FormPolicies,
    /// Ask for server-sent events when the experiment streams.
    #[serde(default)]
    pub stream: bool,
}

fn default_pattern() -> String {
    "sim-{i}".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessagePlan {
    List(Vec<String>),
    Generate { count: usize, min_words: usize, max_words: usize },
}

/// Applied to every agent reply. `random(p)` likes with probability `p`
/// and dislikes otherwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationPolicy {
    #[default]
    Never,
    AlwaysLike,
    Random { p: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FormPolicies {
    #[serde(default)]
    pub registration: AnswerPolicy,
    #[serde(default)]
    pub before: AnswerPolicy,
    #[serde(default)]
    pub after: AnswerPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerPolicy {
    /// Submit nothing.
    Skip,
    /// A uniformly random valid answer for every question.
    #[default]
    Random,
    /// The same answers every time.
    Fixed(Answers),
}

impl ParticipantScript {
    pub fn validate(&self) -> Result<(), String> {
        match &self.messages {
            MessagePlan::List(list) if list.is_empty() => Err("messages: at least one message".into()),
            MessagePlan::Generate { count: 0, .. } => Err("messages: count must be at least 1".into()),
            MessagePlan::Generate { min_words, max_words, .. } if *min_words == 0 || min_words > max_words => {
                Err("messages: need 1 <= min_words <= max_words".into())
            }
            _ => match self.annotation {
                AnnotationPolicy::Random { p } if !(0.0..=1.0).contains(&p) => Err("annotation: p must be within [0,1]".into()),
                _ => Ok(()),
            },
        }
    }

    pub fn username(&self, index: usize) -> String {
        self.username_pattern.replace("{i}", &index.to_string())
    }

    pub fn message_texts<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        match &self.messages {
            MessagePlan::List(list) => list.clone(),
            MessagePlan::Generate { count, min_words, max_words } => (0..*count)
                .map(|_| {
                    let n = rng.random_range(*min_words..=*max_words);
                    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
                })
                .collect(),
        }
    }

    /// `Some(1)` like, `Some(-1)` dislike, `None` leave alone.
    pub fn annotation_for<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<i64> {
        match self.annotation {
            AnnotationPolicy::Never => None,
            AnnotationPolicy::AlwaysLike => Some(1),
            AnnotationPolicy::Random { p } => Some(if rng.random_bool(p) { 1 } else { -1 }),
        }
    }
}

impl AnswerPolicy {
    pub fn answers<R: Rng + ?Sized>(&self, form: Option<&UiFormSchema>, rng: &mut R) -> Option<Answers> {
        let form = form?;
        match self {
            AnswerPolicy::Skip => None,
            AnswerPolicy::Fixed(answers) => Some(answers.clone()),
            AnswerPolicy::Random => Some(form.fields.iter().map(|f| (f.key.clone(), random_value(f, rng))).collect()),
        }
    }
}

fn random_value<R: Rng + ?Sized>(field: &parley_core::forms::UiField, rng: &mut R) -> Value {
    match field.widget {
        Widget::ScaleSlider => {
            let s = field.scale.as_ref().expect("scale field has marks");
            json!(rng.random_range(s.min..=s.max))
        }
        Widget::RadioGroup => match field.options.choose(rng) {
            Some(o) => json!(o.value),
            None => Value::Null,
        },
        Widget::NumberInput => json!(rng.random_range(0..100)),
        Widget::TextInput | Widget::TextArea => {
            let n = rng.random_range(1..=6);
            json!((0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" "))
        }
    }
}
