//! Drives synthetic participants against a running instance.

use std::collections::BTreeSet;

use futures::stream::{self, StreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parley_core::export::ExportBundle;
use parley_core::forms::Phase;
use parley_core::platform::PublicInfo;
use parley_core::{Author, ExperimentId};

use crate::client::{AdminClient, ClientError, ParticipantClient};
use crate::report::{scale_keys, ParticipantLog, ReportError, SimReport};
use crate::script::ParticipantScript;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub base_url: String,
    pub slug: String,
    pub n: usize,
    pub script: ParticipantScript,
    pub seed: u64,
    pub concurrency: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid script: {0}")]
    Script(String),
    #[error("not an experiment address: {0}")]
    Slug(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("export: {0}")]
    Export(#[from] parley_core::export::ExportError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

pub struct SimOutcome {
    pub logs: Vec<ParticipantLog>,
    /// The export exactly as downloaded.
    pub export_json: String,
    pub bundle: ExportBundle,
    pub report: SimReport,
}

/// Participant `index` draws from its own stream of the seeded generator,
/// so its behaviour does not depend on scheduling.
fn participant_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

async fn run_one(http: reqwest::Client, cfg: &SimConfig, info: &PublicInfo, index: usize) -> ParticipantLog {
    let script = &cfg.script;
    let mut rng = participant_rng(cfg.seed, index);
    let mut log = ParticipantLog {
        username: script.username(index),
        ..Default::default()
    };
    let mut client = ParticipantClient::new(http, &cfg.base_url, &cfg.slug);

    let age = info.collect_age.then(|| rng.random_range(18..=70));
    let gender = info.collect_gender.then(|| ["female", "male", "diverse"][rng.random_range(0..3)]);
    let answers = script.forms.registration.answers(info.registration_form.as_ref(), &mut rng);
    if let Err(e) = client.register(&log.username, age, gender, answers).await {
        log.rejections.push(format!("register/{}", e.code()));
        return log;
    }
    log.admitted = true;

    let answers = script.forms.before.answers(info.before_form.as_ref(), &mut rng);
    let view = match client.start(answers).await {
        Ok(v) => v,
        Err(e) => {
            log.rejections.push(format!("start/{}", e.code()));
            return log;
        }
    };
    log.sessions += 1;
    log.agent_messages += view.messages.iter().filter(|m| m.author == Author::Agent).count() as u64;
    let sid = view.session_id;

    let stream = script.stream && info.features.stream_message;
    for text in script.message_texts(&mut rng) {
        let sent = if stream {
            client.send_streaming(sid, &text).await.map(|(_, o)| o)
        } else {
            client.send(sid, &text).await
        };
        let outcome = match sent {
            Ok(o) => o,
            Err(e) => {
                log.rejections.push(format!("send/{}", e.code()));
                break;
            }
        };
        log.user_messages += 1;
        log.user_words += outcome.user_message.text.split_whitespace().count() as u64;
        log.agent_messages += 1;
        if info.features.user_annotation {
            if let Some(value) = script.annotation_for(&mut rng) {
                match client.annotate(outcome.reply.id, value).await {
                    Ok(_) if value == 1 => log.likes += 1,
                    Ok(_) => log.dislikes += 1,
                    Err(e) => log.rejections.push(format!("annotate/{}", e.code())),
                }
            }
        }
        if outcome.force_finish {
            break;
        }
    }

    let answers = script.forms.after.answers(info.after_form.as_ref(), &mut rng);
    match client.finish(sid, answers).await {
        Ok(_) => log.finished_sessions += 1,
        Err(e) => log.rejections.push(format!("finish/{}", e.code())),
    }
    log
}

/// Runs every participant, at most `concurrency` at a time. Logs come back
/// in index order.
pub async fn run_participants(http: &reqwest::Client, cfg: &SimConfig) -> Result<Vec<ParticipantLog>, SimError> {
    cfg.script.validate().map_err(SimError::Script)?;
    if cfg.n == 0 {
        return Ok(Vec::new());
    }
    let info = ParticipantClient::new(http.clone(), &cfg.base_url, &cfg.slug).info().await?;
    let mut logs: Vec<(usize, ParticipantLog)> = stream::iter(0..cfg.n)
        .map(|i| {
            let info = &info;
            async move { (i, run_one(http.clone(), cfg, info, i).await) }
        })
        .buffer_unordered(cfg.concurrency.max(1))
        .collect()
        .await;
    logs.sort_by_key(|(i, _)| *i);
    Ok(logs.into_iter().map(|(_, l)| l).collect())
}

/// Runs the participants, downloads the export and builds the report.
/// Questionnaire scores use every scale question of the before and after
/// forms.
pub async fn run_simulation(http: &reqwest::Client, cfg: &SimConfig, admin: &AdminClient) -> Result<SimOutcome, SimError> {
    let id = ExperimentId::from_slug(&cfg.slug).ok_or_else(|| SimError::Slug(cfg.slug.clone()))?;
    let logs = run_participants(http, cfg).await?;
    let export_json = admin.export_json(id).await?;
    let bundle = ExportBundle::from_json(&export_json)?;
    let forms = bundle.experiment.config.forms;
    let pre = scale_keys(&bundle, forms.before_conversation, Phase::Before);
    let post = scale_keys(&bundle, forms.after_conversation, Phase::After);
    let report = SimReport::assemble(cfg.n as u64, &logs, &bundle, pre, post)?;
    Ok(SimOutcome {
        logs,
        export_json,
        bundle,
        report,
    })
}

pub fn admitted_usernames(logs: &[ParticipantLog]) -> BTreeSet<String> {
    logs.iter().filter(|l| l.admitted).map(|l| l.username.clone()).collect()
}
