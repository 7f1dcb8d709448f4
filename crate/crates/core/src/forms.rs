//! Questionnaires: definitions, response validation, dataset keys, scoring,
//! and the widget description the browser client renders.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Answers, FormId, Violation};

pub const MAX_QUESTIONS: usize = 15;
pub const MAX_SCALE_SPAN: i64 = 10;

pub const PRE_PREFIX: &str = "Pre_";
pub const POST_PREFIX: &str = "Post_";

/// Fixed columns of the responses export table. Question keys may not
/// shadow them.
pub const RESERVED_KEYS: [&str; 6] = [
    "experiment_id",
    "username",
    "condition",
    "session_id",
    "phase",
    "submitted_at",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub value: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionKind {
    ShortText,
    LongText,
    Number,
    SingleChoice {
        options: Vec<ChoiceOption>,
    },
    Scale {
        min: i64,
        max: i64,
        #[serde(default)]
        left_label: String,
        #[serde(default)]
        right_label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub key: String,
    pub text: String,
    #[serde(flatten)]
    pub kind: QuestionKind,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub default: Option<Value>,
    /// Show numeric labels on scale points.
    #[serde(default)]
    pub numbered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormDefinition {
    pub id: FormId,
    pub name: String,
    #[serde(default)]
    pub display_title: String,
    #[serde(default)]
    pub instructions: String,
    pub questions: Vec<Question>,
}

impl FormDefinition {
    pub fn question(&self, key: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.key == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Registration,
    Before,
    After,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Registration => "registration",
            Phase::Before => "before",
            Phase::After => "after",
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Phase::Registration => "",
            Phase::Before => PRE_PREFIX,
            Phase::After => POST_PREFIX,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("no keys selected")]
    NoKeys,
    #[error("unknown question key {0:?}")]
    UnknownKey(String),
    #[error("question {0:?} is not a scale question")]
    NotScale(String),
    #[error("missing or non-numeric answer for {0:?}")]
    MissingAnswer(String),
}

fn key_is_well_formed(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Checks the question limit, key rules and per-kind constraints.
pub fn validate_form_definition(form: &FormDefinition) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if form.name.trim().is_empty() {
        violations.push(Violation::new("name", "required"));
    }
    if form.questions.is_empty() {
        violations.push(Violation::new("questions", "form needs at least 1 question"));
    }
    if form.questions.len() > MAX_QUESTIONS {
        violations.push(Violation::new("questions", "form exceeds 15 questions"));
    }

    let mut keys = HashSet::new();
    for (i, q) in form.questions.iter().enumerate() {
        let field = format!("questions[{i}] ({})", q.key);
        let mut push = |rule: String| violations.push(Violation::new(&field, rule));

        if !key_is_well_formed(&q.key) {
            push("key must be non-empty and use only letters, digits, '_', '-', '.'".into());
        }
        if q.key.starts_with(PRE_PREFIX) || q.key.starts_with(POST_PREFIX) {
            push("keys starting with Pre_ or Post_ are reserved".into());
        }
        if RESERVED_KEYS.contains(&q.key.as_str()) {
            push(format!("key {:?} is reserved for export columns", q.key));
        }
        if !keys.insert(q.key.as_str()) {
            push("duplicate key".into());
        }
        if q.text.trim().is_empty() {
            push("question text required".into());
        }
        match &q.kind {
            QuestionKind::Scale { min, max, .. } => {
                if min >= max {
                    push("scale needs min < max".into());
                } else if max - min > MAX_SCALE_SPAN {
                    push("scale spans more than 10 points".into());
                }
            }
            QuestionKind::SingleChoice { options } => {
                if options.len() < 2 {
                    push("single choice needs at least 2 options".into());
                }
                let mut values = HashSet::new();
                if options.iter().any(|o| !values.insert(o.value.as_str())) {
                    push("duplicate option value".into());
                }
            }
            _ => {}
        }
        if let Some(default) = &q.default {
            if check_answer(q, default).is_err() {
                push("default is not a legal answer".into());
            }
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn as_integer(value: &Value) -> Option<i64> {
    match value {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_number(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|f| f.is_finite()),
        _ => None,
    }
}

fn is_blank(value: &Value) -> bool {
    match value {
        Value::Null => true,
        Value::String(s) => s.trim().is_empty(),
        _ => false,
    }
}

/// Checks one present answer and returns its canonical form.
pub fn check_answer(question: &Question, value: &Value) -> Result<Value, String> {
    match &question.kind {
        QuestionKind::ShortText | QuestionKind::LongText => match value {
            Value::String(s) => Ok(Value::String(s.clone())),
            _ => Err("must be text".into()),
        },
        QuestionKind::Number => {
            let n = as_number(value).ok_or("must be a number")?;
            if n.fract() == 0.0 && n.abs() < 9.0e15 {
                Ok(Value::from(n as i64))
            } else {
                Ok(Value::from(n))
            }
        }
        QuestionKind::Scale { min, max, .. } => {
            let n = as_integer(value).ok_or("must be an integer")?;
            if (*min..=*max).contains(&n) {
                Ok(Value::from(n))
            } else {
                Err("out of range".into())
            }
        }
        QuestionKind::SingleChoice { options } => {
            let chosen = match value {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                _ => return Err("not one of the options".into()),
            };
            if options.iter().any(|o| o.value == chosen) {
                Ok(Value::String(chosen))
            } else {
                Err("not one of the options".into())
            }
        }
    }
}

/// Checks required coverage and per-kind legality. On success returns the
/// answers in canonical form (numeric strings become numbers, blanks drop).
pub fn validate_response(form: &FormDefinition, answers: &Answers) -> Result<Answers, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut clean = Answers::new();

    for key in answers.keys() {
        if form.question(key).is_none() {
            violations.push(Violation::new(key, "unknown key"));
        }
    }
    for q in &form.questions {
        match answers.get(&q.key).filter(|v| !is_blank(v)) {
            None if q.required => violations.push(Violation::new(&q.key, "required")),
            None => {}
            Some(value) => match check_answer(q, value) {
                Ok(v) => {
                    clean.insert(q.key.clone(), v);
                }
                Err(rule) => violations.push(Violation::new(&q.key, rule)),
            },
        }
    }

    if violations.is_empty() {
        Ok(clean)
    } else {
        Err(violations)
    }
}

pub fn dataset_key(key: &str, phase: Phase) -> String {
    format!("{}{}", phase.prefix(), key)
}

/// Maps each question key to its dataset key, in question order.
pub fn dataset_keys(form: &FormDefinition, phase: Phase) -> IndexMap<String, String> {
    form.questions
        .iter()
        .map(|q| (q.key.clone(), dataset_key(&q.key, phase)))
        .collect()
}

/// Re-keys answers under their dataset keys for `phase`.
pub fn prefix_answers(answers: &Answers, phase: Phase) -> Answers {
    answers
        .iter()
        .map(|(k, v)| (dataset_key(k, phase), v.clone()))
        .collect()
}

/// Arithmetic mean of the selected scale answers.
pub fn mean_scale_score(form: &FormDefinition, answers: &Answers, keys: &[&str]) -> Result<f64, ScoreError> {
    if keys.is_empty() {
        return Err(ScoreError::NoKeys);
    }
    let mut total = 0.0;
    for &key in keys {
        let q = form
            .question(key)
            .ok_or_else(|| ScoreError::UnknownKey(key.to_owned()))?;
        if !matches!(q.kind, QuestionKind::Scale { .. }) {
            return Err(ScoreError::NotScale(key.to_owned()));
        }
        let value = answers
            .get(key)
            .and_then(as_number)
            .ok_or_else(|| ScoreError::MissingAnswer(key.to_owned()))?;
        total += value;
    }
    Ok(total / keys.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Widget {
    TextInput,
    TextArea,
    NumberInput,
    RadioGroup,
    ScaleSlider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleMarks {
    pub min: i64,
    pub max: i64,
    pub left_label: String,
    pub right_label: String,
    pub marks: Vec<i64>,
    pub numbered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiField {
    pub key: String,
    pub label: String,
    pub widget: Widget,
    pub required: bool,
    #[serde(default)]
    pub default: Option<Value>,
    #[serde(default)]
    pub options: Vec<ChoiceOption>,
    #[serde(default)]
    pub scale: Option<ScaleMarks>,
}

/// Rendering description of a form, one field per question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiFormSchema {
    pub form_id: FormId,
    pub title: String,
    pub instructions: String,
    pub fields: Vec<UiField>,
}

pub fn ui_schema(form: &FormDefinition) -> UiFormSchema {
    let fields = form
        .questions
        .iter()
        .map(|q| {
            let (widget, options, scale) = match &q.kind {
                QuestionKind::ShortText => (Widget::TextInput, vec![], None),
                QuestionKind::LongText => (Widget::TextArea, vec![], None),
                QuestionKind::Number => (Widget::NumberInput, vec![], None),
                QuestionKind::SingleChoice { options } => (Widget::RadioGroup, options.clone(), None),
                QuestionKind::Scale {
                    min,
                    max,
                    left_label,
                    right_label,
                } => (
                    Widget::ScaleSlider,
                    vec![],
                    Some(ScaleMarks {
                        min: *min,
                        max: *max,
                        left_label: left_label.clone(),
                        right_label: right_label.clone(),
                        marks: (*min..=*max).collect(),
                        numbered: q.numbered,
                    }),
                ),
            };
            UiField {
                key: q.key.clone(),
                label: q.text.clone(),
                widget,
                required: q.required,
                default: q.default.clone(),
                options,
                scale,
            }
        })
        .collect();
    UiFormSchema {
        form_id: form.id,
        title: if form.display_title.is_empty() {
            form.name.clone()
        } else {
            form.display_title.clone()
        },
        instructions: form.instructions.clone(),
        fields,
    }
}

/// Sample instrument layouts shipped with the platform. Item texts are
/// placeholders.
pub mod templates {
    use super::FormDefinition;

    fn load(json: &str) -> FormDefinition {
        serde_json::from_str(json).expect("bundled form template is valid JSON")
    }

    /// Ten 5-point usability items.
    pub fn usability_sus() -> FormDefinition {
        load(include_str!("../fixtures/forms/sus.json"))
    }

    /// Six 0–10 workload dimensions, unweighted.
    pub fn workload_tlx_raw() -> FormDefinition {
        load(include_str!("../fixtures/forms/tlx_raw.json"))
    }

    /// Twelve 7-point bipolar mood items.
    pub fn mood_scale_12() -> FormDefinition {
        load(include_str!("../fixtures/forms/mood12.json"))
    }

    pub fn all() -> Vec<FormDefinition> {
        vec![usability_sus(), workload_tlx_raw(), mood_scale_12()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn scale(key: &str, min: i64, max: i64, required: bool) -> Question {
        Question {
            key: key.into(),
            text: format!("How do you feel ({key})?"),
            kind: QuestionKind::Scale {
                min,
                max,
                left_label: "bad".into(),
                right_label: "good".into(),
            },
            required,
            default: None,
            numbered: true,
        }
    }

    fn form(questions: Vec<Question>) -> FormDefinition {
        FormDefinition {
            id: FormId::random(),
            name: "mood".into(),
            display_title: "How are you?".into(),
            instructions: String::new(),
            questions,
        }
    }

    fn n_scales(n: usize) -> FormDefinition {
        form((1..=n).map(|i| scale(&format!("mood{i}"), 1, 7, true)).collect())
    }

    fn answers(pairs: &[(&str, Value)]) -> Answers {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn rules(v: &[Violation]) -> Vec<&str> {
        v.iter().map(|v| v.rule.as_str()).collect()
    }

    #[test]
    fn fifteen_questions_accepted_sixteen_rejected() {
        assert_eq!(validate_form_definition(&n_scales(15)), Ok(()));
        let err = validate_form_definition(&n_scales(16)).unwrap_err();
        assert_eq!(rules(&err), ["form exceeds 15 questions"]);
        assert!(validate_form_definition(&n_scales(0)).is_err());
    }

    #[test]
    fn duplicate_keys_rejected() {
        let f = form(vec![scale("mood1", 1, 7, true), scale("mood1", 1, 5, false)]);
        let err = validate_form_definition(&f).unwrap_err();
        assert_eq!(rules(&err), ["duplicate key"]);
        assert_eq!(err[0].field, "questions[1] (mood1)");
    }

    #[test]
    fn question_invariants() {
        let mut bad_default = scale("d", 1, 5, false);
        bad_default.default = Some(json!(9));
        let f = form(vec![
            scale("inverted", 5, 5, true),
            scale("wide", 0, 11, true),
            Question {
                key: "pick".into(),
                text: "Pick".into(),
                kind: QuestionKind::SingleChoice {
                    options: vec![ChoiceOption {
                        value: "x".into(),
                        label: "X".into(),
                    }],
                },
                required: false,
                default: None,
                numbered: false,
            },
            bad_default,
            scale("Pre_mood", 1, 7, true),
            scale("username", 1, 7, true),
            scale("has space", 1, 7, true),
        ]);
        let err = validate_form_definition(&f).unwrap_err();
        let got = rules(&err);
        assert!(got.contains(&"scale needs min < max"));
        assert!(got.contains(&"scale spans more than 10 points"));
        assert!(got.contains(&"single choice needs at least 2 options"));
        assert!(got.contains(&"default is not a legal answer"));
        assert!(got.contains(&"keys starting with Pre_ or Post_ are reserved"));
        assert!(got.iter().any(|r| r.contains("reserved for export columns")));
        assert!(got.iter().any(|r| r.starts_with("key must be")));

        assert_eq!(validate_form_definition(&form(vec![scale("ten", 0, 10, true)])), Ok(()));
    }

    #[test]
    fn response_required_and_range() {
        let f = n_scales(1);
        assert_eq!(
            validate_response(&f, &answers(&[("mood1", json!(7))])),
            Ok(answers(&[("mood1", json!(7))]))
        );
        let err = validate_response(&f, &Answers::new()).unwrap_err();
        assert_eq!(err, vec![Violation::new("mood1", "required")]);
        let err = validate_response(&f, &answers(&[("mood1", json!(8))])).unwrap_err();
        assert_eq!(rules(&err), ["out of range"]);
        let err = validate_response(&f, &answers(&[("mood1", json!(""))])).unwrap_err();
        assert_eq!(rules(&err), ["required"]);
    }

    #[test]
    fn response_kinds_and_unknown_keys() {
        let f = form(vec![
            Question {
                key: "age_group".into(),
                text: "Age group".into(),
                kind: QuestionKind::SingleChoice {
                    options: vec![
                        ChoiceOption { value: "18-30".into(), label: "18 to 30".into() },
                        ChoiceOption { value: "31+".into(), label: "31 or older".into() },
                    ],
                },
                required: true,
                default: None,
                numbered: false,
            },
            Question {
                key: "hours".into(),
                text: "Hours online".into(),
                kind: QuestionKind::Number,
                required: false,
                default: None,
                numbered: false,
            },
            Question {
                key: "note".into(),
                text: "Anything else?".into(),
                kind: QuestionKind::LongText,
                required: false,
                default: None,
                numbered: false,
            },
            scale("s", 1, 5, false),
        ]);
        let ok = validate_response(
            &f,
            &answers(&[
                ("age_group", json!("31+")),
                ("hours", json!("2.5")),
                ("note", json!("fine")),
                ("s", json!("4")),
            ]),
        )
        .unwrap();
        assert_eq!(ok["hours"], json!(2.5));
        assert_eq!(ok["s"], json!(4));

        let err = validate_response(
            &f,
            &answers(&[
                ("age_group", json!("99")),
                ("hours", json!("lots")),
                ("note", json!(3)),
                ("s", json!(2.5)),
                ("extra", json!(1)),
            ]),
        )
        .unwrap_err();
        let got = rules(&err);
        assert_eq!(
            got,
            [
                "unknown key",
                "not one of the options",
                "must be a number",
                "must be text",
                "must be an integer"
            ]
        );
    }

    #[test]
    fn dataset_key_prefixes() {
        let f = form(vec![scale("mood1", 1, 7, true)]);
        assert_eq!(dataset_keys(&f, Phase::Before)["mood1"], "Pre_mood1");
        assert_eq!(dataset_keys(&f, Phase::After)["mood1"], "Post_mood1");
        assert_eq!(dataset_key("age_group", Phase::Registration), "age_group");
    }

    #[test]
    fn mean_scores() {
        let f = n_scales(12);
        let a = answers(&[("mood1", json!(4)), ("mood2", json!(6))]);
        assert_eq!(mean_scale_score(&f, &a, &["mood1", "mood2"]), Ok(5.0));
        let a = answers(&[("mood1", json!(7))]);
        assert_eq!(mean_scale_score(&f, &a, &["mood1"]), Ok(7.0));
        let all: Answers = (1..=12).map(|i| (format!("mood{i}"), json!(3))).collect();
        let keys: Vec<String> = (1..=12).map(|i| format!("mood{i}")).collect();
        let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
        assert_eq!(mean_scale_score(&f, &all, &keys), Ok(3.0));

        assert_eq!(
            mean_scale_score(&f, &Answers::new(), &["mood1"]),
            Err(ScoreError::MissingAnswer("mood1".into()))
        );
        assert_eq!(mean_scale_score(&f, &all, &["nope"]), Err(ScoreError::UnknownKey("nope".into())));
        assert_eq!(mean_scale_score(&f, &all, &[]), Err(ScoreError::NoKeys));
        let text = form(vec![Question {
            key: "t".into(),
            text: "t".into(),
            kind: QuestionKind::ShortText,
            required: false,
            default: None,
            numbered: false,
        }]);
        assert_eq!(
            mean_scale_score(&text, &answers(&[("t", json!("x"))]), &["t"]),
            Err(ScoreError::NotScale("t".into()))
        );
    }

    #[test]
    fn templates_validate_and_render() {
        for t in templates::all() {
            assert_eq!(validate_form_definition(&t), Ok(()), "{}", t.name);
            let ui = ui_schema(&t);
            assert_eq!(ui.fields.len(), t.questions.len());
        }
        assert_eq!(templates::usability_sus().questions.len(), 10);
        assert_eq!(templates::workload_tlx_raw().questions.len(), 6);
        assert_eq!(templates::mood_scale_12().questions.len(), 12);
    }

    #[test]
    fn ui_schema_widgets() {
        let mut s = scale("s", 1, 3, true);
        s.numbered = false;
        let ui = ui_schema(&form(vec![s]));
        let field = &ui.fields[0];
        assert_eq!(field.widget, Widget::ScaleSlider);
        let marks = field.scale.as_ref().unwrap();
        assert_eq!(marks.marks, vec![1, 2, 3]);
        assert!(!marks.numbered);
    }

    #[test]
    fn question_json_is_flat() {
        let q = scale("m", 1, 7, true);
        let v = serde_json::to_value(&q).unwrap();
        assert_eq!(v["kind"], "scale");
        assert_eq!(v["min"], 1);
        assert_eq!(serde_json::from_value::<Question>(v).unwrap(), q);
    }

    proptest! {
        #[test]
        fn prefixing_is_injective(keys in prop::collection::hash_set("[a-z][a-z0-9_]{0,6}", 1..15)) {
            let f = form(keys.iter().map(|k| scale(k, 1, 7, false)).collect());
            prop_assume!(validate_form_definition(&f).is_ok());
            let mut seen = HashSet::new();
            for phase in [Phase::Registration, Phase::Before, Phase::After] {
                for dk in dataset_keys(&f, phase).into_values() {
                    prop_assert!(seen.insert(dk));
                }
            }
        }

        #[test]
        fn valid_response_covers_required_columns(
            n in 1usize..=15,
            picks in prop::collection::vec(1i64..=7, 15),
            required_mask in prop::collection::vec(any::<bool>(), 15),
        ) {
            let qs: Vec<Question> = (0..n)
                .map(|i| scale(&format!("q{i}"), 1, 7, required_mask[i]))
                .collect();
            let f = form(qs);
            let a: Answers = (0..n).map(|i| (format!("q{i}"), json!(picks[i]))).collect();
            let clean = validate_response(&f, &a).unwrap();
            let prefixed = prefix_answers(&clean, Phase::After);
            for q in f.questions.iter().filter(|q| q.required) {
                prop_assert!(prefixed.contains_key(&dataset_key(&q.key, Phase::After)));
            }
        }
    }
}
