mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{fixture, MODELS};
use http_body_util::BodyExt;
use mad_annotate::{router, SessionConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/choice")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

#[tokio::test]
async fn scripted_client_runs_a_full_session() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let session = Arc::new(fx.open(&dir.path().join("choices.jsonl"), SessionConfig { seed: 9, repeats: 1 }));
    let app = router(Arc::clone(&session));

    let (status, summary) = get(&app, "/api/session").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["trials"], fx.mad.records().len());
    assert_eq!(summary["choices"], 0);

    let mut answered = 0;
    loop {
        let (status, next) = get(&app, "/api/trial/next?rater=bot").await;
        assert_eq!(status, StatusCode::OK);
        let text = next.to_string();
        assert!(MODELS.iter().all(|m| !text.contains(m)), "{text}");
        if next["status"] == "done" {
            assert_eq!(next["progress"]["done"], answered);
            break;
        }
        assert_eq!(next["status"], "trial");
        let id = next["trial_id"].as_str().unwrap().to_string();
        let (s, png) = call(
            &app,
            Request::get(next["left_url"].as_str().unwrap())
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(&png[1..4], b"PNG");
        let side = if answered % 3 == 0 { "right" } else { "left" };
        let (s, ack) = post(&app, json!({"trial_id": id, "side": side, "rater": "bot"})).await;
        assert_eq!(s, StatusCode::OK, "{ack}");
        assert_eq!(ack["status"], "recorded");
        answered += 1;
        assert_eq!(ack["progress"]["done"], answered);
    }

    let (s, first) = call(&app, Request::get("/api/export").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let (_, second) = call(&app, Request::get("/api/export").body(Body::empty()).unwrap()).await;
    assert_eq!(first, second);
    let export: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(export["log"].as_str().unwrap().lines().count(), answered);
    let on_disk = std::fs::read_to_string(session.log_path()).unwrap();
    assert_eq!(export["log"].as_str().unwrap(), on_disk);
}

#[tokio::test]
async fn errors_have_status_and_body() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(
        fx.open(&dir.path().join("choices.jsonl"), SessionConfig::default()),
    ));

    let (s, body) = post(&app, json!({"trial_id": "t99999", "side": "left", "rater": "r"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_trial");
    assert!(body["detail"].as_str().unwrap().contains("t99999"));

    let (s, _) = get(&app, "/assets/pred/left/t99999").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get(&app, "/assets/pred/middle/t00000").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, body) = get(&app, "/assets/image/nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");

    let (s, body) = get(&app, "/api/trial/next").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(body["detail"].is_string());

    let (s, body) = post(&app, json!({"trial_id": "t00000", "side": "up", "rater": "r"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_request");

    let (s, body) = get(&app, "/api/export").await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "empty_log");

    let ok = json!({"trial_id": "t00000", "side": "LEFT", "rater": "r"});
    assert_eq!(post(&app, ok.clone()).await.0, StatusCode::OK);
    let (s, dup) = post(&app, ok).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(dup["status"], "duplicate");
    let (s, conflict) = post(&app, json!({"trial_id": "t00000", "side": "right", "rater": "r"})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(conflict["chosen_side"], "left");

    let (s, _) = get(&app, "/nowhere").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
