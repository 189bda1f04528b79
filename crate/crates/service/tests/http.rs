//! The HTTP API end to end, through the router and the writer thread.

mod common;

use std::collections::HashMap;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use nerloop_core::Tag;
use nerloop_service::api::{ErrorBody, ModelInspection, NextSample, SubmitAck, TaskOverview};
use nerloop_service::server::{SchemeView, TOKEN_HEADER};
use nerloop_service::{router, Identity, Project, ServiceHandle};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

fn identities() -> HashMap<String, Identity> {
    HashMap::from([
        ("tok-a".to_string(), Identity::Annotator("alice".into())),
        ("tok-b".to_string(), Identity::Annotator("bob".into())),
        ("tok-admin".to_string(), Identity::Admin),
    ])
}

fn app(project: Project) -> (Router, ServiceHandle) {
    let (handle, _join) = ServiceHandle::spawn(project);
    (router(handle.clone(), identities()), handle)
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(TOKEN_HEADER, t);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get<T: DeserializeOwned>(app: &Router, uri: &str, token: &str) -> T {
    let (status, body) = call(app, "GET", uri, Some(token), None).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

async fn error(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, String) {
    let (status, bytes) = call(app, method, uri, token, body).await;
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    (status, err.error)
}

#[tokio::test]
async fn authentication() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(project(dir.path(), 1));
    assert_eq!(call(&app, "GET", "/api/health", None, None).await.0, StatusCode::OK);
    assert_eq!(
        error(&app, "GET", "/api/next-sample", None, None).await,
        (StatusCode::UNAUTHORIZED, "unauthorized".into())
    );
    assert_eq!(
        error(&app, "GET", "/api/next-sample", Some("nope"), None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        error(&app, "GET", "/api/next-sample", Some("tok-admin"), None).await.0,
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        error(&app, "POST", "/api/admin/save", Some("tok-a"), None).await.0,
        StatusCode::FORBIDDEN
    );
    assert_eq!(call(&app, "POST", "/api/admin/save", Some("tok-admin"), None).await.0, StatusCode::OK);

    // A record naming someone else is refused.
    let v = sample(get(&app, "/api/next-sample", "tok-a").await);
    let rec = serde_json::to_value(accept(&v, "bob")).unwrap();
    assert_eq!(
        error(&app, "POST", "/api/feedback", Some("tok-a"), Some(rec)).await,
        (StatusCode::FORBIDDEN, "forbidden".into())
    );
}

#[tokio::test]
async fn payload_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(project(dir.path(), 1));
    let v = sample(get(&app, "/api/next-sample", "tok-a").await);
    let mut rec = serde_json::to_value(accept(&v, "alice")).unwrap();
    rec["final_tags"][0] = json!("Q-Drug");
    assert_eq!(
        error(&app, "POST", "/api/feedback", Some("tok-a"), Some(rec.clone())).await,
        (StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload".into())
    );
    rec["final_tags"][0] = json!("B-Gene");
    assert_eq!(
        error(&app, "POST", "/api/feedback", Some("tok-a"), Some(rec.clone())).await,
        (StatusCode::UNPROCESSABLE_ENTITY, "invalid_annotation".into())
    );
    rec["final_tags"][0] = json!("O");
    rec["mood"] = json!("tired");
    assert_eq!(
        error(&app, "POST", "/api/feedback", Some("tok-a"), Some(rec)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let mut other = serde_json::to_value(accept(&v, "alice")).unwrap();
    other["instance_id"] = json!("tgt-test-00000");
    assert_eq!(
        error(&app, "POST", "/api/feedback", Some("tok-a"), Some(other)).await,
        (StatusCode::CONFLICT, "not_queried".into())
    );
    let scheme: SchemeView = get(&app, "/api/scheme", "tok-b").await;
    assert_eq!(scheme.entity_types.len(), 12);
    assert_eq!(scheme.tags.len(), 25);
    assert_eq!(
        error(&app, "PUT", "/api/inspection/mode", Some("tok-a"), Some(json!({"mode": "both"}))).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test]
async fn full_round_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (app, handle) = app(project(dir.path(), 1));

    let before: ModelInspection = get(&app, "/api/inspection", "tok-a").await;
    assert!(before.rounds.is_empty());

    let mut last = None;
    loop {
        let (status, body) = call(&app, "GET", "/api/next-sample", Some("tok-a"), None).await;
        assert_eq!(status, StatusCode::OK);
        // Responses parse back strictly.
        let next: NextSample = serde_json::from_slice(&body).unwrap();
        let NextSample::Sample(v) = next else {
            assert!(matches!(next, NextSample::Retraining { round: 1 } | NextSample::RoundDrained { .. }));
            break;
        };
        let raw: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(raw["status"], "sample");
        let rec = serde_json::to_value(accept(&v, "alice")).unwrap();
        let (status, body) = call(&app, "POST", "/api/feedback", Some("tok-a"), Some(rec.clone())).await;
        assert_eq!(status, StatusCode::OK);
        let ack: SubmitAck = serde_json::from_slice(&body).unwrap();
        assert_eq!(ack.corrections, 0);
        // Resubmitting returns the first acknowledgment byte for byte.
        let (_, again) = call(&app, "POST", "/api/feedback", Some("tok-a"), Some(rec)).await;
        assert_eq!(again, body);
        last = Some(ack);
    }
    assert!(last.unwrap().retraining_started);

    let mut waited = 0;
    let overview = loop {
        let o: TaskOverview = get(&app, "/api/overview", "tok-b").await;
        if o.rounds_completed == 1 {
            break o;
        }
        waited += 1;
        assert!(waited < 600, "retrain did not finish");
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    assert_eq!(overview.annotators[0].corrections, 0);
    assert!(!overview.batch.as_ref().unwrap().retraining);
    let json: Value = serde_json::to_value(&overview).unwrap();
    assert!(json.get("consistency").is_none());

    let ins: ModelInspection = get(&app, "/api/inspection", "tok-b").await;
    assert_eq!(ins.rounds.len(), 1);
    let (status, body) = call(&app, "PUT", "/api/inspection/mode", Some("tok-b"), Some(json!({"mode": "inclusive"}))).await;
    assert_eq!(status, StatusCode::OK);
    let switched: ModelInspection = serde_json::from_slice(&body).unwrap();
    assert_eq!(switched.rounds, ins.rounds);

    let v = sample(get(&app, "/api/next-sample", "tok-b").await);
    assert_eq!(v.round, 2);
    let mut rec = accept(&v, "bob");
    rec.final_tags = vec![Tag::Outside; rec.final_tags.len()];
    let ack: SubmitAck = {
        let (s, b) = call(&app, "POST", "/api/feedback", Some("tok-b"), Some(serde_json::to_value(&rec).unwrap())).await;
        assert_eq!(s, StatusCode::OK);
        serde_json::from_slice(&b).unwrap()
    };
    let changed = v.suggested_tags.iter().filter(|t| **t != Tag::Outside).count();
    assert_eq!(ack.corrections, changed);

    let annotations: Vec<nerloop_core::AnnotationRecord> = get(&app, "/api/admin/annotations", "tok-admin").await;
    assert_eq!(annotations.len(), 4);
    handle.shutdown().await.unwrap();

    // The stopped writer saved everything; a reopened project agrees.
    let p = Project::open(dir.path()).unwrap();
    assert_eq!(p.all_annotations(), annotations);
    assert_eq!(p.inspection(), switched);
}
