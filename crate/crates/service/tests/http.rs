use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use thingsyntax::encoder::{fit_gmm, GmmOptions};
use thingsyntax::grammar::{histogram_from_statements, BinBoundaries, Cuts, HistogramLayout, StatementHistogram};
use thingsyntax::io::{generate_synthetic, save_model, save_windows, Archetype, BoxRecord, WindowsRecord};
use thingsyntax::retrieval::PriorModel;
use thingsyntax::{Color, PropertyMask};
use thingsyntax_service::*;
use tower::ServiceExt;

const TARGET: &str = "Green large wide thing at bottom middle";

fn boundaries() -> BinBoundaries {
    BinBoundaries::new(
        3,
        Cuts {
            horizontal: vec![1.0 / 3.0, 2.0 / 3.0],
            vertical: vec![1.0 / 3.0, 2.0 / 3.0],
            size: vec![0.02, 0.1],
            ratio: vec![1.0 / 3.0, 2.0 / 3.0],
        },
    )
    .unwrap()
}

fn image(id: &str, x: f64, y: f64, w: f64, h: f64, color: Color) -> WindowsRecord {
    WindowsRecord {
        image_id: id.into(),
        width: 640,
        height: 480,
        scene: Some(id.to_uppercase()),
        boxes: vec![BoxRecord { x, y, w, h, color: Some(color), source: None }],
    }
}

// "g" is the only image whose window is large, wide, green and at bottom
// middle; every other image differs from it in exactly one property.
fn corpus() -> Vec<WindowsRecord> {
    vec![
        image("a", 128.0, 24.0, 384.0, 96.0, Color::Green),
        image("b", 128.0, 360.0, 384.0, 96.0, Color::Red),
        image("c", 288.0, 400.0, 64.0, 16.0, Color::Green),
        image("d", 272.0, 96.0, 96.0, 384.0, Color::Green),
        image("g", 128.0, 360.0, 384.0, 96.0, Color::Green),
    ]
}

fn write_index(dir: &Path, alpha: f64) {
    save_model(&dir.join(BOUNDARIES_FILE), &boundaries()).unwrap();
    let prior = PriorModel::from_counts(StatementHistogram::zeros(HistogramLayout::new(3)), alpha).unwrap();
    save_model(&dir.join(PRIOR_FILE), &prior).unwrap();
    let holdout: Vec<_> = generate_synthetic(&Archetype::ALL, 5, 1).iter().map(|r| r.syntax(None).unwrap()).collect();
    let gmm = fit_gmm(&holdout, 2, 0, PropertyMask::FULL, GmmOptions::default()).unwrap();
    save_model(&dir.join(GMM_FILE), &gmm).unwrap();
    save_windows(&dir.join(CORPUS_FILE), &corpus()).unwrap();
}

fn loaded() -> (tempfile::TempDir, LoadedIndex) {
    let dir = tempfile::tempdir().unwrap();
    write_index(dir.path(), 1.0);
    let idx = load_index_dir(dir.path(), None).unwrap();
    (dir, idx)
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(state, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn unavailable_before_load() {
    let state = AppState::empty();
    let (s, body) = call_json(&state, "GET", "/index/info", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "index-not-loaded");
    let (s, _) = call_json(&state, "POST", "/query", Some(json!({"statements": [TARGET]}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn index_info() {
    let (dir, idx) = loaded();
    let state = AppState::with_index(idx);
    let (s, info) = call_json(&state, "GET", "/index/info", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(info["corpus_size"], 5);
    assert_eq!(info["B"], 3);
    assert_eq!(info["K"], 2);
    let bytes = std::fs::read(dir.path().join(BOUNDARIES_FILE)).unwrap();
    assert_eq!(info["boundaries_digest"], sha256_hex(&bytes));
    let digests = info["model_digests"].as_object().unwrap();
    assert_eq!(digests.len(), 4);

    // rewriting identical files keeps the digests; changing the prior moves only its digest
    write_index(dir.path(), 1.0);
    let again = load_index_dir(dir.path(), None).unwrap().info;
    assert_eq!(serde_json::to_value(&again).unwrap(), info);
    write_index(dir.path(), 2.0);
    let changed = load_index_dir(dir.path(), None).unwrap().info;
    assert_ne!(changed.model_digests[PRIOR_FILE], digests[PRIOR_FILE]);
    assert_eq!(changed.model_digests[GMM_FILE], digests[GMM_FILE]);
    assert_eq!(changed.boundaries_digest, info["boundaries_digest"]);
}

#[tokio::test]
async fn forced_ranking_puts_the_target_first() {
    let (_dir, idx) = loaded();
    let state = AppState::with_index(idx);
    let (s, body) = call_json(&state, "POST", "/query", Some(json!({"statements": [TARGET]}))).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["mode"], "statements");
    let results = body["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    assert_eq!(results[0]["image_id"], "g");
    // the rest tie and fall back to id order
    let rest: Vec<&str> = results[1..].iter().map(|r| r["image_id"].as_str().unwrap()).collect();
    assert_eq!(rest, ["a", "b", "c", "d"]);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r["rank"], i + 1);
    }
    assert!(results[0]["score"].as_f64().unwrap() > results[1]["score"].as_f64().unwrap());
}

#[tokio::test]
async fn identical_requests_give_identical_bodies() {
    let (_dir, idx) = loaded();
    let state = AppState::with_index(idx);
    let req = json!({"statements": [TARGET, "Red large wide thing at bottom middle"], "result_limit": 3});
    let (_, first) = call(&state, "POST", "/query", Some(req.clone())).await;
    let mut handles = Vec::new();
    for _ in 0..8 {
        let (state, req) = (state.clone(), req.clone());
        handles.push(tokio::spawn(async move { call(&state, "POST", "/query", Some(req)).await.1 }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), first);
    }
    let body: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(body["results"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn block_and_fused_queries() {
    let (_dir, idx) = loaded();
    let state = AppState::with_index(idx);
    let block = json!({"x": 0.2, "y": 0.75, "w": 0.6, "h": 0.2, "color": "green"});
    let (s, body) = call_json(&state, "POST", "/query", Some(json!({"blocks": [block]}))).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["mode"], "blocks");
    let scores: Vec<f64> = body["results"].as_array().unwrap().iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert_eq!(scores.len(), 5);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(scores.iter().all(|s| *s <= 0.0));

    let any = json!({"x": 0.2, "y": 0.75, "w": 0.6, "h": 0.2, "color": "any"});
    let (s, _) = call_json(&state, "POST", "/query", Some(json!({"blocks": [any]}))).await;
    assert_eq!(s, StatusCode::OK);

    let req = json!({"statements": [TARGET], "blocks": [block], "fuse": true});
    let (s, body) = call_json(&state, "POST", "/query", Some(req)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["mode"], "fused");
    assert_eq!(body["results"][0]["image_id"], "g");
}

#[tokio::test]
async fn malformed_queries_are_rejected() {
    let (_dir, idx) = loaded();
    let state = AppState::with_index(idx);
    let block = json!({"x": 0.2, "y": 0.75, "w": 0.6, "h": 0.2, "color": "green"});
    let cases = [
        (json!({"blocks": []}), StatusCode::BAD_REQUEST, "invalid-query"),
        (json!({"statements": []}), StatusCode::BAD_REQUEST, "invalid-query"),
        (json!({}), StatusCode::BAD_REQUEST, "invalid-query"),
        (json!({"statements": [TARGET], "blocks": [block]}), StatusCode::BAD_REQUEST, "invalid-query"),
        (json!({"statements": [TARGET], "fuse": true}), StatusCode::BAD_REQUEST, "invalid-query"),
        (json!({"statements": [TARGET], "result_limit": 0}), StatusCode::BAD_REQUEST, "invalid-query"),
        (json!({"statements": [TARGET], "properties": []}), StatusCode::BAD_REQUEST, "invalid-query"),
        (json!({"statements": [TARGET], "B": 5}), StatusCode::CONFLICT, "index-mismatch"),
        (json!({"blocks": [block], "K": 8}), StatusCode::CONFLICT, "index-mismatch"),
        (json!({"blocks": [{"x": 0.5, "y": 0.0, "w": 0.6, "h": 0.2, "color": "red"}]}), StatusCode::BAD_REQUEST, "invalid-block"),
        (json!({"blocks": [{"x": 0.1, "y": 0.0, "w": 0.6, "h": 0.2, "color": "teal"}]}), StatusCode::BAD_REQUEST, "invalid-block"),
    ];
    for (req, status, kind) in cases {
        let (s, body) = call_json(&state, "POST", "/query", Some(req.clone())).await;
        assert_eq!((s, body["error"].as_str().unwrap()), (status, kind), "{req}");
    }
    let (s, body) = call(&state, "POST", "/query", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&body));
}

#[tokio::test]
async fn parse_errors_point_at_the_token() {
    let (_dir, idx) = loaded();
    let state = AppState::with_index(idx);
    let req = json!({"statements": [TARGET, "Green large wiide thing at bottom middle"]});
    let (s, body) = call_json(&state, "POST", "/query", Some(req)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "parse-error");
    assert_eq!(body["statement"], 2);
    assert_eq!(body["token"], "wiide");
    assert_eq!(body["position"], 3);
    assert_eq!(body["column"], 12);
    assert!(body["expected"].as_str().unwrap().contains("wide"), "{body}");
}

#[tokio::test]
async fn image_statements_round_trip() {
    let (_dir, idx) = loaded();
    let state = AppState::with_index(idx);
    let (s, body) = call_json(&state, "GET", "/images/g/statements", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["statements"], json!([TARGET]));
    assert_eq!(body["scene"], "G");
    assert_eq!(body["histogram"]["total"], 1.0);
    assert_eq!(body["histogram"]["length"], 891);
    assert_eq!(body["histogram"]["nonzero"][0]["statement"], TARGET);

    let texts: Vec<String> = serde_json::from_value(body["statements"].clone()).unwrap();
    let back = histogram_from_statements(&texts, 3).unwrap();
    let indexed = state.current().unwrap();
    assert_eq!(back, indexed.index.get("g").unwrap().histogram);

    let (s, body) = call_json(&state, "GET", "/images/nope/statements", None).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("not-found")));
}

#[tokio::test]
async fn centered_square_green_window() {
    let dir = tempfile::tempdir().unwrap();
    write_index(dir.path(), 1.0);
    let square = WindowsRecord {
        image_id: "sq".into(),
        width: 400,
        height: 400,
        scene: None,
        boxes: vec![BoxRecord { x: 150.0, y: 150.0, w: 100.0, h: 100.0, color: Some(Color::Green), source: None }],
    };
    save_windows(&dir.path().join("other.jsonl"), &[square]).unwrap();
    let idx = load_index_dir(dir.path(), Some(&dir.path().join("other.jsonl"))).unwrap();
    assert!(idx.info.model_digests.contains_key("other.jsonl"));
    let out = image_statements(&idx, "sq").unwrap();
    assert_eq!(out.statements.len(), 1);
    assert!(out.statements[0].contains("squared") && out.statements[0].contains("Green"), "{:?}", out.statements);
}

#[tokio::test]
async fn thumbnails_and_swap() {
    let (dir, idx) = loaded();
    let thumbs = dir.path().join("thumbs");
    std::fs::create_dir(&thumbs).unwrap();
    std::fs::write(thumbs.join("g.png"), b"not really a png").unwrap();
    let state = AppState::with_index(idx.with_thumbnails(&thumbs));
    let (_, body) = call_json(&state, "POST", "/query", Some(json!({"statements": [TARGET], "result_limit": 2}))).await;
    assert_eq!(body["results"][0]["thumbnail_url"], "/thumbs/g");
    assert!(body["results"][1].get("thumbnail_url").is_none());
    let (s, bytes) = call(&state, "GET", "/thumbs/g", None).await;
    assert_eq!((s, bytes.as_slice()), (StatusCode::OK, b"not really a png".as_slice()));
    let (s, _) = call(&state, "GET", "/thumbs/a", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let before = state.current().unwrap();
    let mut smaller = corpus();
    smaller.truncate(2);
    save_windows(&dir.path().join(CORPUS_FILE), &smaller).unwrap();
    state.swap(load_index_dir(dir.path(), None).unwrap());
    let (_, info) = call_json(&state, "GET", "/index/info", None).await;
    assert_eq!(info["corpus_size"], 2);
    // a request holding the old snapshot still sees five images
    assert_eq!(before.index.len(), 5);
}
