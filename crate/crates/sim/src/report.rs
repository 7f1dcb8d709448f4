//! Descriptive per-condition statistics, and their recount from an export.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use parley_core::export::ExportBundle;
use parley_core::forms::{dataset_key, Phase, QuestionKind};
use parley_core::{Author, FormId, SessionId};

/// What one synthetic participant did, as seen from the client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticipantLog {
    pub username: String,
    pub admitted: bool,
    pub sessions: u64,
    pub finished_sessions: u64,
    pub user_messages: u64,
    pub user_words: u64,
    pub agent_messages: u64,
    pub likes: u64,
    pub dislikes: u64,
    /// `stage/code` of every rejected call, in order.
    pub rejections: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoodDelta {
    pub pre_mean: Option<f64>,
    pub post_mean: Option<f64>,
    /// Mean over sessions with both scores of (post - pre).
    pub delta: Option<f64>,
    pub pairs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub agent_id: String,
    pub participants: u64,
    pub sessions: u64,
    pub user_messages: u64,
    pub agent_messages: u64,
    pub mean_words_per_user_message: Option<f64>,
    pub likes: u64,
    pub dislikes: u64,
    pub mood: Option<MoodDelta>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub participants_requested: u64,
    pub participants_admitted: u64,
    pub rejections: BTreeMap<String, u64>,
    pub open_sessions: u64,
    pub pre_keys: Vec<String>,
    pub post_keys: Vec<String>,
    /// Keyed by blinded condition label ("A", "B").
    pub conditions: BTreeMap<String, ConditionReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("participant {0} is missing from the export")]
    MissingParticipant(String),
    #[error("export has no column {0}")]
    MissingColumn(String),
}

/// Counts recomputed from export rows alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Recount {
    pub participants: u64,
    pub sessions: u64,
    pub open_sessions: u64,
    pub user_messages: u64,
    pub user_words: u64,
    pub agent_messages: u64,
    pub likes: u64,
    pub dislikes: u64,
}

fn mean(total: f64, n: u64) -> Option<f64> {
    (n > 0).then(|| total / n as f64)
}

fn labels(bundle: &ExportBundle) -> BTreeMap<String, String> {
    let config = &bundle.experiment.config;
    config
        .agents
        .iter()
        .filter_map(|a| Some((config.condition_label(a.agent_id)?, a.agent_id.to_string())))
        .collect()
}

fn included(only: Option<&BTreeSet<String>>, username: &str) -> bool {
    only.is_none_or(|set| set.contains(username))
}

/// Per-condition counts straight from the export's row tables, optionally
/// restricted to some usernames.
pub fn recount(bundle: &ExportBundle, only: Option<&BTreeSet<String>>) -> BTreeMap<String, Recount> {
    let mut out: BTreeMap<String, Recount> = labels(bundle).into_keys().map(|l| (l, Recount::default())).collect();
    let label_of: HashMap<&str, &str> = bundle
        .participants
        .iter()
        .map(|p| (p.username.as_str(), p.condition_label.as_str()))
        .collect();
    let label = |username: &str| -> Option<String> {
        included(only, username).then_some(())?;
        label_of.get(username).map(|l| (*l).to_owned())
    };
    for p in &bundle.participants {
        if let Some(l) = label(&p.username) {
            out.entry(l).or_default().participants += 1;
        }
    }
    for s in &bundle.sessions {
        if let Some(l) = label(&s.username) {
            let r = out.entry(l).or_default();
            r.sessions += 1;
            r.open_sessions += u64::from(s.finished_at.is_none());
        }
    }
    for m in &bundle.messages {
        if let Some(l) = label(&m.username) {
            let r = out.entry(l).or_default();
            match m.author {
                Author::User => {
                    r.user_messages += 1;
                    r.user_words += m.text.split_whitespace().count() as u64;
                }
                Author::Agent => r.agent_messages += 1,
            }
            match m.annotation.map(i64::from) {
                Some(1) => r.likes += 1,
                Some(-1) => r.dislikes += 1,
                _ => {}
            }
        }
    }
    out
}

/// Scale questions of a linked form, as dataset keys.
pub fn scale_keys(bundle: &ExportBundle, form: Option<FormId>, phase: Phase) -> Vec<String> {
    let Some(form) = form.and_then(|id| bundle.experiment.forms.iter().find(|f| f.id == id)) else {
        return Vec::new();
    };
    form.questions
        .iter()
        .filter(|q| matches!(q.kind, QuestionKind::Scale { .. }))
        .map(|q| dataset_key(&q.key, phase))
        .collect()
}

fn normalize(keys: &[String], phase: Phase) -> Vec<String> {
    keys.iter()
        .map(|k| {
            if k.starts_with(phase.prefix()) {
                k.clone()
            } else {
                dataset_key(k, phase)
            }
        })
        .collect()
}

/// Mean of `Post` scores minus mean of `Pre` scores per condition, paired by
/// session. Keys may be given with or without their `Pre_`/`Post_` prefix.
pub fn report_mood_delta(
    bundle: &ExportBundle,
    pre_keys: &[String],
    post_keys: &[String],
    only: Option<&BTreeSet<String>>,
) -> Result<BTreeMap<String, MoodDelta>, ReportError> {
    let pre_keys = normalize(pre_keys, Phase::Before);
    let post_keys = normalize(post_keys, Phase::After);
    let columns: BTreeSet<String> = bundle.response_columns().into_iter().collect();
    for k in pre_keys.iter().chain(&post_keys) {
        if !columns.contains(k) {
            return Err(ReportError::MissingColumn(k.clone()));
        }
    }
    let label_of: HashMap<&str, &str> = bundle
        .participants
        .iter()
        .map(|p| (p.username.as_str(), p.condition_label.as_str()))
        .collect();

    // (label, session) -> (pre score, post score)
    let mut scores: BTreeMap<(String, SessionId), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in &bundle.responses {
        let (keys, is_pre) = match r.phase {
            Phase::Before => (&pre_keys, true),
            Phase::After => (&post_keys, false),
            Phase::Registration => continue,
        };
        let (Some(session), Some(label)) = (r.session_id, label_of.get(r.username.as_str())) else {
            continue;
        };
        if keys.is_empty() || !included(only, &r.username) {
            continue;
        }
        let values: Option<Vec<f64>> = keys.iter().map(|k| r.answers.get(k).and_then(|v| v.as_f64())).collect();
        let Some(values) = values else { continue };
        let score = values.iter().sum::<f64>() / values.len() as f64;
        let entry = scores.entry(((*label).to_owned(), session)).or_default();
        if is_pre {
            entry.0 = Some(score);
        } else {
            entry.1 = Some(score);
        }
    }

    let mut out: BTreeMap<String, MoodDelta> = labels(bundle).into_keys().map(|l| (l, MoodDelta::default())).collect();
    let mut sums: BTreeMap<String, [(f64, u64); 3]> = BTreeMap::new();
    for ((label, _), (pre, post)) in scores {
        let s = sums.entry(label).or_default();
        if let Some(p) = pre {
            s[0].0 += p;
            s[0].1 += 1;
        }
        if let Some(p) = post {
            s[1].0 += p;
            s[1].1 += 1;
        }
        if let (Some(a), Some(b)) = (pre, post) {
            s[2].0 += b - a;
            s[2].1 += 1;
        }
    }
    for (label, [pre, post, delta]) in sums {
        out.insert(
            label,
            MoodDelta {
                pre_mean: mean(pre.0, pre.1),
                post_mean: mean(post.0, post.1),
                delta: mean(delta.0, delta.1),
                pairs: delta.1,
            },
        );
    }
    Ok(out)
}

impl SimReport {
    /// Counts come from the client-side logs; the export is consulted only
    /// for each participant's condition and for questionnaire scores.
    pub fn assemble(
        requested: u64,
        logs: &[ParticipantLog],
        bundle: &ExportBundle,
        pre_keys: Vec<String>,
        post_keys: Vec<String>,
    ) -> Result<Self, ReportError> {
        let label_of: HashMap<&str, &str> = bundle
            .participants
            .iter()
            .map(|p| (p.username.as_str(), p.condition_label.as_str()))
            .collect();
        let mut conditions: BTreeMap<String, ConditionReport> = labels(bundle)
            .into_iter()
            .map(|(label, agent_id)| (label, ConditionReport { agent_id, ..Default::default() }))
            .collect();
        let mut words: BTreeMap<String, u64> = BTreeMap::new();
        let mut report = SimReport {
            participants_requested: requested,
            ..Default::default()
        };
        for log in logs {
            for r in &log.rejections {
                *report.rejections.entry(r.clone()).or_default() += 1;
            }
            if !log.admitted {
                continue;
            }
            report.participants_admitted += 1;
            report.open_sessions += log.sessions - log.finished_sessions;
            let label = label_of
                .get(log.username.as_str())
                .ok_or_else(|| ReportError::MissingParticipant(log.username.clone()))?;
            let c = conditions.entry((*label).to_owned()).or_default();
            c.participants += 1;
            c.sessions += log.sessions;
            c.user_messages += log.user_messages;
            c.agent_messages += log.agent_messages;
            c.likes += log.likes;
            c.dislikes += log.dislikes;
            *words.entry((*label).to_owned()).or_default() += log.user_words;
        }
        for (label, c) in conditions.iter_mut() {
            c.mean_words_per_user_message = mean(words.get(label).copied().unwrap_or(0) as f64, c.user_messages);
        }
        if !pre_keys.is_empty() || !post_keys.is_empty() {
            let admitted: BTreeSet<String> = logs.iter().filter(|l| l.admitted).map(|l| l.username.clone()).collect();
            for (label, mood) in report_mood_delta(bundle, &pre_keys, &post_keys, Some(&admitted))? {
                conditions.entry(label).or_default().mood = Some(mood);
            }
        }
        report.pre_keys = pre_keys;
        report.post_keys = post_keys;
        report.conditions = conditions;
        Ok(report)
    }

    /// Compares every count against an independent recount of the export,
    /// restricted to `usernames`. Returns each disagreement.
    pub fn reconcile(&self, bundle: &ExportBundle, usernames: &BTreeSet<String>) -> Result<(), Vec<String>> {
        let recounted = recount(bundle, Some(usernames));
        let mut problems = Vec::new();
        fn check(problems: &mut Vec<String>, what: String, ours: u64, theirs: u64) {
            if ours != theirs {
                problems.push(format!("{what}: report {ours}, export {theirs}"));
            }
        }
        let empty = Recount::default();
        let labels: BTreeSet<&String> = self.conditions.keys().chain(recounted.keys()).collect();
        let mut open = 0;
        let mut admitted = 0;
        for label in labels {
            let default = ConditionReport::default();
            let ours = self.conditions.get(label).unwrap_or(&default);
            let theirs = recounted.get(label).unwrap_or(&empty);
            check(&mut problems, format!("{label}.participants"), ours.participants, theirs.participants);
            check(&mut problems, format!("{label}.sessions"), ours.sessions, theirs.sessions);
            check(&mut problems, format!("{label}.user_messages"), ours.user_messages, theirs.user_messages);
            check(&mut problems, format!("{label}.agent_messages"), ours.agent_messages, theirs.agent_messages);
            check(&mut problems, format!("{label}.likes"), ours.likes, theirs.likes);
            check(&mut problems, format!("{label}.dislikes"), ours.dislikes, theirs.dislikes);
            let words = mean(theirs.user_words as f64, theirs.user_messages);
            if ours.mean_words_per_user_message != words {
                problems.push(format!(
                    "{label}.mean_words_per_user_message: report {:?}, export {words:?}",
                    ours.mean_words_per_user_message
                ));
            }
            open += theirs.open_sessions;
            admitted += theirs.participants;
        }
        check(&mut problems, "open_sessions".into(), self.open_sessions, open);
        check(&mut problems, "participants_admitted".into(), self.participants_admitted, admitted);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}
