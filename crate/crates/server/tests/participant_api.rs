mod common;

use axum::http::{header, Method, StatusCode};
use proptest::prelude::*;
use serde_json::{json, Value};

use common::*;
use parley_core::provider::mock::MockProvider;
use parley_server::Settings;

const SSE: [(&str, &str); 1] = [("accept", "text/event-stream")];

#[tokio::test]
async fn full_participation_flow() {
    let app = TestApp::new();
    let s = app
        .study(json!({
            "features": {"user_annotation": true},
            "boundaries": {"max_conversations_per_participant": 2, "max_messages_per_interaction": 2},
            "post_interaction_message": {"text": "Thanks!", "survey_url_template": "https://survey.example/?u={username}&c={condition}"},
            "main_page": {"title": "Welcome", "body": "Please chat."}
        }))
        .await;

    let r = app.call(Method::GET, &format!("/api/e/{}", s.slug), None, None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["title"], "Tone study");
    assert_eq!(r.json()["max_messages_per_interaction"], 2);

    let token = app.register(&s.slug, "ada lovelace").await;
    let r = app
        .call(Method::POST, &format!("/api/e/{}/register", s.slug), None, Some(json!({"username": "ada lovelace"})))
        .await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error_code(), "username_taken");

    let r = app
        .call(Method::POST, &format!("/api/e/{}/login", s.slug), None, Some(json!({"username": "nobody"})))
        .await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = app
        .call(Method::POST, &format!("/api/e/{}/login", s.slug), None, Some(json!({"username": "ada lovelace"})))
        .await;
    assert_eq!(r.status, StatusCode::OK);

    let conv = app.start(&s.slug, &token).await;
    let sid = conv["session_id"].as_str().unwrap().to_owned();
    assert_eq!(conv["messages"].as_array().unwrap().len(), 1);
    assert_eq!(conv["messages"][0]["author"], "agent");

    let r = app.send(&s.slug, &token, &sid, "first").await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let out = r.json();
    assert_eq!(out["user_message"]["text"], "first");
    assert_eq!(out["reply"]["author"], "agent");
    assert_eq!(out["force_finish"], false);
    let reply_id = out["reply"]["id"].as_str().unwrap().to_owned();

    let out = app.send(&s.slug, &token, &sid, "second").await.json();
    assert_eq!(out["force_finish"], true);
    let r = app.send(&s.slug, &token, &sid, "third").await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    assert_eq!(r.error_code(), "quota_exceeded");

    for value in [1, -1] {
        let r = app
            .call(
                Method::POST,
                &format!("/api/e/{}/messages/{reply_id}/annotation", s.slug),
                Some(&token),
                Some(json!({"value": value})),
            )
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        assert_eq!(r.json()["annotation"], value);
    }
    let r = app
        .call(
            Method::POST,
            &format!("/api/e/{}/messages/{reply_id}/annotation", s.slug),
            Some(&token),
            Some(json!({"value": 0})),
        )
        .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = app
        .call(Method::POST, &format!("/api/e/{}/conversations/{sid}/finish", s.slug), Some(&token), None)
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let fin = r.json();
    assert_eq!(fin["text"], "Thanks!");
    let url = fin["survey_url"].as_str().unwrap();
    assert!(url.starts_with("https://survey.example/?u=ada%20lovelace&c="), "{url}");
    assert!(url.ends_with("c=A") || url.ends_with("c=B"), "{url}");

    let r = app
        .call(Method::GET, &format!("/api/e/{}/conversations/{sid}", s.slug), Some(&token), None)
        .await;
    assert!(r.json()["finished_at"].is_string());
    assert_eq!(r.json()["messages"].as_array().unwrap().len(), 5);

    app.start(&s.slug, &token).await;
    let r = app.call(Method::POST, &format!("/api/e/{}/conversations", s.slug), Some(&token), None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    assert_eq!(r.error_code(), "quota_exceeded");

    let me = app.call(Method::GET, &format!("/api/e/{}/me", s.slug), Some(&token), None).await.json();
    assert_eq!(me["sessions"].as_array().unwrap().len(), 2);
    assert_eq!(me["can_start"], false);
}

#[tokio::test]
async fn annotation_respects_the_feature_flag() {
    let app = TestApp::new();
    let s = app.study(json!({})).await;
    let token = app.register(&s.slug, "p").await;
    let conv = app.start(&s.slug, &token).await;
    let mid = conv["messages"][0]["id"].as_str().unwrap();
    let r = app
        .call(
            Method::POST,
            &format!("/api/e/{}/messages/{mid}/annotation", s.slug),
            Some(&token),
            Some(json!({"value": 1})),
        )
        .await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    assert_eq!(r.error_code(), "feature_disabled");
}

#[tokio::test]
async fn participant_cap_is_reported() {
    let app = TestApp::new();
    let s = app.study(json!({"boundaries": {"max_participants": 1}})).await;
    app.register(&s.slug, "first").await;
    let r = app
        .call(Method::POST, &format!("/api/e/{}/register", s.slug), None, Some(json!({"username": "second"})))
        .await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error_code(), "experiment_full");
}

#[tokio::test]
async fn streamed_reply_arrives_as_events() {
    let app = TestApp::with(MockProvider::scripted(["Streaming works fine."]), Settings::default());
    let s = app.study(json!({"features": {"stream_message": true}})).await;
    let token = app.register(&s.slug, "p").await;
    let sid = app.start(&s.slug, &token).await["session_id"].as_str().unwrap().to_owned();

    let r = app
        .call_with(
            Method::POST,
            &format!("/api/e/{}/conversations/{sid}/messages", s.slug),
            Some(&token),
            Some(json!({"text": "hi"})),
            &SSE,
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.headers[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/event-stream"));
    let events = sse_events(&r.text());
    let (last, deltas) = events.split_last().unwrap();
    assert!(deltas.len() > 1, "{events:?}");
    assert!(deltas.iter().all(|(e, _)| e == "delta"));
    let joined: String = deltas.iter().map(|(_, d)| d["delta"].as_str().unwrap()).collect();
    assert_eq!(joined, "Streaming works fine.");
    assert_eq!(last.0, "done");
    assert_eq!(last.1["reply"]["text"], "Streaming works fine.");
    assert_eq!(last.1["reply"]["delivery"], "complete");

    // the same request without Accept gets plain JSON
    let r = app.send(&s.slug, &token, &sid, "again").await;
    assert!(r.headers[header::CONTENT_TYPE].to_str().unwrap().starts_with("application/json"));
}

#[tokio::test]
async fn errors_before_streaming_keep_their_status() {
    let app = TestApp::new();
    let s = app
        .study(json!({"features": {"stream_message": true}, "boundaries": {"max_messages_per_interaction": 1}}))
        .await;
    let token = app.register(&s.slug, "p").await;
    let sid = app.start(&s.slug, &token).await["session_id"].as_str().unwrap().to_owned();
    let uri = format!("/api/e/{}/conversations/{sid}/messages", s.slug);
    let r = app.call_with(Method::POST, &uri, Some(&token), Some(json!({"text": "one"})), &SSE).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = app.call_with(Method::POST, &uri, Some(&token), Some(json!({"text": "two"})), &SSE).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    assert_eq!(r.error_code(), "quota_exceeded");
}

/// Every participant-facing body, scanned for anything that would reveal
/// which condition a participant is in.
#[tokio::test]
async fn participant_responses_are_blinded() {
    let app = TestApp::new();
    let s = app.study(json!({"features": {"user_annotation": true, "stream_message": true}})).await;
    let agents = app.call(Method::GET, "/api/admin/agents", Some(&s.admin), None).await.json();
    let mut secrets: Vec<String> = s.agents.to_vec();
    for a in agents.as_array().unwrap() {
        secrets.push(a["title"].as_str().unwrap().to_owned());
        secrets.push(a["description"].as_str().unwrap().to_owned());
        secrets.push(a["system_starter_prompt"].as_str().unwrap().to_owned());
    }

    let mut bodies = Vec::new();
    bodies.push(app.call(Method::GET, &format!("/api/e/{}", s.slug), None, None).await.text());
    bodies.push(app.call(Method::GET, &format!("/e/{}", s.slug), None, None).await.text());
    let token = app.register(&s.slug, "p").await;
    let conv = app.start(&s.slug, &token).await;
    bodies.push(conv.to_string());
    let sid = conv["session_id"].as_str().unwrap().to_owned();
    let out = app.send(&s.slug, &token, &sid, "hello").await;
    bodies.push(out.text());
    let streamed = app
        .call_with(
            Method::POST,
            &format!("/api/e/{}/conversations/{sid}/messages", s.slug),
            Some(&token),
            Some(json!({"text": "again"})),
            &SSE,
        )
        .await;
    bodies.push(streamed.text());
    bodies.push(app.call(Method::GET, &format!("/api/e/{}/me", s.slug), Some(&token), None).await.text());
    bodies.push(
        app.call(Method::GET, &format!("/api/e/{}/conversations/{sid}", s.slug), Some(&token), None)
            .await
            .text(),
    );
    bodies.push(
        app.call(Method::POST, &format!("/api/e/{}/conversations/{sid}/finish", s.slug), Some(&token), None)
            .await
            .text(),
    );

    for body in &bodies {
        assert!(!body.contains("agent_id"), "agent_id leaked: {body}");
        assert!(!body.contains("condition"), "condition leaked: {body}");
        for secret in &secrets {
            assert!(!body.contains(secret.as_str()), "{secret:?} leaked: {body}");
        }
    }
}

/// Once a study is closed no participant endpoint accepts work, whatever
/// the token, and the address page shows only a notice.
#[tokio::test]
async fn deactivation_closes_every_participant_endpoint() {
    let app = TestApp::new();
    let s = app.study(json!({"features": {"user_annotation": true}})).await;
    let token = app.register(&s.slug, "p").await;
    let conv = app.start(&s.slug, &token).await;
    let sid = conv["session_id"].as_str().unwrap().to_owned();
    let mid = conv["messages"][0]["id"].as_str().unwrap().to_owned();

    let r = app
        .call(
            Method::PUT,
            &format!("/api/admin/experiments/{}/status", s.id),
            Some(&s.admin),
            Some(json!({"status": "inactive"})),
        )
        .await;
    assert_eq!(r.status, StatusCode::OK);

    let slug = &s.slug;
    let calls: Vec<(Method, String, Option<Value>)> = vec![
        (Method::GET, format!("/api/e/{slug}"), None),
        (Method::POST, format!("/api/e/{slug}/register"), Some(json!({"username": "late"}))),
        (Method::POST, format!("/api/e/{slug}/login"), Some(json!({"username": "p"}))),
        (Method::GET, format!("/api/e/{slug}/me"), None),
        (Method::POST, format!("/api/e/{slug}/conversations"), None),
        (Method::GET, format!("/api/e/{slug}/conversations/{sid}"), None),
        (Method::POST, format!("/api/e/{slug}/conversations/{sid}/messages"), Some(json!({"text": "x"}))),
        (Method::POST, format!("/api/e/{slug}/conversations/{sid}/finish"), None),
        (Method::POST, format!("/api/e/{slug}/messages/{mid}/annotation"), Some(json!({"value": 1}))),
    ];
    for tok in [Some(token.as_str()), None] {
        for (method, uri, body) in &calls {
            let r = app.call(method.clone(), uri, tok, body.clone()).await;
            assert_eq!(r.status, StatusCode::FORBIDDEN, "{method} {uri}: {}", r.text());
            assert_eq!(r.error_code(), "experiment_inactive");
        }
    }
    let page = app.call(Method::GET, &format!("/e/{slug}"), None, None).await;
    assert_eq!(page.status, StatusCode::OK);
    assert!(page.text().contains("closed"));
    assert!(!page.text().contains("/api/e/"));

    // nothing was written while closed
    let summary = app
        .call(Method::GET, &format!("/api/admin/experiments/{}/summary", s.id), Some(&s.admin), None)
        .await
        .json();
    assert_eq!(summary["participants_count"], 1);
    assert_eq!(summary["sessions_count"], 1);
}

#[tokio::test]
async fn unknown_slugs_are_404() {
    let app = TestApp::new();
    for uri in ["/api/e/AAAAAAAAAAAAAAAAAAAAAA", "/api/e/garbage!/me", "/e/AAAAAAAAAAAAAAAAAAAAAA"] {
        let r = app.call(Method::GET, uri, None, None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
    }
}

struct World {
    app: TestApp,
    slugs: [String; 2],
    /// per experiment: (token, session id, first message id) per participant
    people: Vec<Vec<(String, String, String)>>,
}

async fn world() -> World {
    let app = TestApp::new();
    let s1 = app.study(json!({"features": {"user_annotation": true}})).await;
    let s2 = app.study(json!({"features": {"user_annotation": true}})).await;
    let mut people = Vec::new();
    for s in [&s1, &s2] {
        let mut ps = Vec::new();
        for name in ["u0", "u1"] {
            let token = app.register(&s.slug, name).await;
            let conv = app.start(&s.slug, &token).await;
            ps.push((
                token,
                conv["session_id"].as_str().unwrap().to_owned(),
                conv["messages"][0]["id"].as_str().unwrap().to_owned(),
            ));
        }
        people.push(ps);
    }
    World {
        app,
        slugs: [s1.slug, s2.slug],
        people,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A token only ever reaches its own participant's data in its own
    /// experiment. Anything else is 401, 403 or 404, never a success.
    #[test]
    fn tokens_cannot_cross_participants_or_experiments(
        who in (0usize..2, 0usize..2),
        target in (0usize..2, 0usize..2),
        endpoint in 0usize..4,
        no_token in any::<bool>(),
    ) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async {
            let w = world().await;
            let (token, _, _) = &w.people[who.0][who.1];
            let (_, sid, mid) = &w.people[target.0][target.1];
            let slug = &w.slugs[target.0];
            let (method, uri, body) = match endpoint {
                0 => (Method::GET, format!("/api/e/{slug}/conversations/{sid}"), None),
                1 => (Method::POST, format!("/api/e/{slug}/conversations/{sid}/messages"), Some(json!({"text": "x"}))),
                2 => (Method::POST, format!("/api/e/{slug}/conversations/{sid}/finish"), None),
                _ => (Method::POST, format!("/api/e/{slug}/messages/{mid}/annotation"), Some(json!({"value": 1}))),
            };
            let r = w.app.call(method, &uri, (!no_token).then_some(token.as_str()), body).await;
            let owner = who == target && !no_token;
            if owner {
                assert!(r.status.is_success(), "{uri}: {}", r.text());
            } else {
                assert!(
                    [StatusCode::UNAUTHORIZED, StatusCode::FORBIDDEN, StatusCode::NOT_FOUND].contains(&r.status),
                    "{uri} gave {}: {}", r.status, r.text()
                );
            }
        });
    }
}
