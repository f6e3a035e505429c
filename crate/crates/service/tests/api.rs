use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use hasd::envs::Nav2dConfig;
use hasd::preference::{export_queries, import_human_labels, PreferenceBuffer, QueryPair, Segment};
use hasd_service::{router, ExportResponse, FeedbackSession, Progress, QueryView};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn segment(x0: f64, episode: u64) -> Segment {
    let states: Vec<Vec<f64>> = (0..4).map(|i| vec![x0 + 0.12 * i as f64, -0.5]).collect();
    Segment {
        actions: vec![vec![1.0, 0.0]; states.len()],
        gt_rewards: vec![0.0; states.len()],
        states,
        episode,
        start: 0,
    }
}

fn queries(n: u64) -> Vec<QueryPair> {
    (0..n)
        .map(|i| QueryPair::new(10 + i, segment(0.0, i), segment(1.0, i + 100)).unwrap())
        .collect()
}

fn app(n: u64, dir: &Path) -> Router {
    let s = FeedbackSession::new(queries(n), &Nav2dConfig::default(), dir.join("out/labels.jsonl"));
    router(Arc::new(Mutex::new(s)), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::test]
async fn next_on_empty_set_is_no_content() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(0, dir.path());
    let (s, body) = call(&app, Method::GET, "/api/queries/next", None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    assert!(body.is_empty());
}

#[tokio::test]
async fn next_query_wire_format() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(2, dir.path());
    let (s, body) = call(&app, Method::GET, "/api/queries/next", None).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["id"], 10);
    assert_eq!(v["seg1"].as_array().unwrap().len(), 4);
    assert_eq!(v["seg2"][0], json!([1.0, -0.5]));
    assert_eq!(v["env"]["room_radius"], 4.0);
    assert_eq!(v["env"]["hazards"].as_array().unwrap().len(), 4);
    assert_eq!(v["env"]["hazards"][0]["radius"], 0.6);
    let typed: QueryView = serde_json::from_value(v).unwrap();
    assert_eq!(typed.seg1[3], [0.36, -0.5]);
}

#[tokio::test]
async fn label_then_progress() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(3, dir.path());
    let (s, _) = call(&app, Method::POST, "/api/labels", Some(json!({"id": 11, "choice": "1"}))).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (_, body) = call(&app, Method::GET, "/api/progress", None).await;
    let p: Progress = serde_json::from_slice(&body).unwrap();
    assert_eq!(
        p,
        Progress {
            labeled: 1,
            skipped: 0,
            remaining: 2
        }
    );
    call(&app, Method::POST, "/api/labels", Some(json!({"id": 10, "choice": "skip"}))).await;
    let (_, body) = call(&app, Method::GET, "/api/progress", None).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, json!({"labeled": 1, "skipped": 1, "remaining": 1}));
    let (_, body) = call(&app, Method::GET, "/api/queries/next", None).await;
    let q: QueryView = serde_json::from_slice(&body).unwrap();
    assert_eq!(q.id, 12);
}

#[tokio::test]
async fn double_label_and_unknown_id() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(2, dir.path());
    let (s, _) = call(&app, Method::POST, "/api/labels", Some(json!({"id": 10, "choice": "tie"}))).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = call(&app, Method::POST, "/api/labels", Some(json!({"id": 10, "choice": "2"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, Method::POST, "/api/labels", Some(json!({"id": 99, "choice": "2"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::POST, "/api/labels", Some(json!({"id": 11, "choice": "3"}))).await;
    assert!(s.is_client_error());
    let (_, body) = call(&app, Method::GET, "/api/progress", None).await;
    let p: Progress = serde_json::from_slice(&body).unwrap();
    assert_eq!((p.labeled, p.remaining), (1, 1));
}

#[tokio::test]
async fn full_flow_exports_importable_labels() {
    let dir = tempfile::tempdir().unwrap();
    let qpath = dir.path().join("queries.jsonl");
    let qs = queries(5);
    export_queries(&qs, &qpath).unwrap();
    let session = FeedbackSession::load(&qpath, &Nav2dConfig::default(), dir.path().join("out/labels.jsonl")).unwrap();
    let app = router(Arc::new(Mutex::new(session)), None);
    let choices = ["1", "2", "tie", "1", "2"];
    let mut k = 0;
    loop {
        let (s, body) = call(&app, Method::GET, "/api/queries/next", None).await;
        if s == StatusCode::NO_CONTENT {
            break;
        }
        let q: QueryView = serde_json::from_slice(&body).unwrap();
        let (s, _) = call(&app, Method::POST, "/api/labels", Some(json!({"id": q.id, "choice": choices[k]}))).await;
        assert_eq!(s, StatusCode::NO_CONTENT);
        k += 1;
    }
    assert_eq!(k, 5);
    let (s, body) = call(&app, Method::POST, "/api/export", None).await;
    assert_eq!(s, StatusCode::OK);
    let e: ExportResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(e.count, 5);
    let mut buf = PreferenceBuffer::new();
    let imported = import_human_labels(&hasd::preference::read_queries(&qpath).unwrap(), &e.path, &mut buf).unwrap();
    assert_eq!(imported, qs.len());
}

#[tokio::test]
async fn serves_static_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let web = dir.path().join("web");
    std::fs::create_dir_all(&web).unwrap();
    std::fs::write(web.join("index.html"), "<html>ui</html>").unwrap();
    let s = FeedbackSession::new(queries(1), &Nav2dConfig::default(), dir.path().join("l.jsonl"));
    let app = router(Arc::new(Mutex::new(s)), Some(web));
    let (s, body) = call(&app, Method::GET, "/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
    let (s, _) = call(&app, Method::GET, "/api/progress", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn concurrent_labels_are_each_recorded_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(20, dir.path());
    let mut handles = Vec::new();
    for i in 0..40u64 {
        let app = app.clone();
        // every id is posted twice
        handles.push(tokio::spawn(async move {
            call(&app, Method::POST, "/api/labels", Some(json!({"id": 10 + i % 20, "choice": "1"}))).await.0
        }));
    }
    let mut ok = 0;
    let mut conflict = 0;
    for h in handles {
        match h.await.unwrap() {
            StatusCode::NO_CONTENT => ok += 1,
            StatusCode::CONFLICT => conflict += 1,
            other => panic!("{other}"),
        }
    }
    assert_eq!((ok, conflict), (20, 20));
}
