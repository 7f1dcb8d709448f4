mod common;

use axum::http::{Method, StatusCode};
use serde_json::Value;

use common::*;

fn documented() -> Vec<(Method, String)> {
    let doc: Value = serde_json::from_str(parley_server::OPENAPI).unwrap();
    let mut ops = Vec::new();
    for (path, item) in doc["paths"].as_object().unwrap() {
        for (method, _) in item.as_object().unwrap() {
            if method == "parameters" {
                continue;
            }
            ops.push((method.to_uppercase().parse().unwrap(), path.clone()));
        }
    }
    ops
}

#[tokio::test]
async fn document_is_served() {
    let app = TestApp::new();
    let r = app.call(Method::GET, "/api/openapi.json", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["openapi"], "3.1.0");
}

/// Each documented operation is routed: never the API fallback, never 405.
#[tokio::test]
async fn every_documented_operation_is_routed() {
    let app = TestApp::new();
    let s = app.study(serde_json::json!({})).await;
    let ops = documented();
    assert!(ops.len() >= 30, "only {} operations documented", ops.len());
    for (method, path) in ops {
        let uri = path
            .replace("{slug}", &s.slug)
            .replace("{id}", &s.id)
            .replace("{sid}", "00000000-0000-0000-0000-000000000000")
            .replace("{mid}", "00000000-0000-0000-0000-000000000000");
        let r = app.call(method.clone(), &uri, None, None).await;
        assert_ne!(r.status, StatusCode::METHOD_NOT_ALLOWED, "{method} {path}");
        if r.status == StatusCode::NOT_FOUND && uri.starts_with("/api") {
            assert_ne!(r.error_code(), "no_route", "{method} {path}");
        }
    }
}

/// The reverse direction: a sample of paths that must not exist are
/// answered by the fallback, so the check above is meaningful.
#[tokio::test]
async fn undocumented_paths_hit_the_fallback() {
    let app = TestApp::new();
    for uri in ["/api/admin/participants", "/api/e/x/y/z", "/api/experiments"] {
        let r = app.call(Method::GET, uri, None, None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(r.error_code(), "no_route", "{uri}");
    }
}

/// Counts the method routers in the route table source, so adding a
/// handler without documenting it fails here.
#[test]
fn router_and_document_list_the_same_operations() {
    let src = include_str!("../src/routes/mod.rs");
    let routed: usize = src
        .split(".route(")
        .skip(1)
        .map(|chunk| {
            let body = &chunk[..chunk.find(");").unwrap_or(chunk.len())];
            ["get(", "post(", "put(", "delete("].iter().map(|m| body.matches(m).count()).sum::<usize>()
        })
        .sum();
    let documented = documented().len();
    assert_eq!(routed, documented, "router has {routed} operations, document has {documented}");
}
