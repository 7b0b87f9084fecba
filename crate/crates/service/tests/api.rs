use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use clinlink_core::export::{AnnotationExport, EXPORT_SCHEMA};
use clinlink_core::trainer::{supervised_train, TrainOptions};
use clinlink_core::{ConceptDatabase, ConceptRow, Engine, EngineConfig, TextPipeline, Vocabulary};
use clinlink_service::{router, AnnotateResponse, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const DOCS: [(&str, &str); 3] = [
    ("d1", "Resting heart rate was 72 bpm on the monitor."),
    ("d2", "Chest pain resolved and HR settled overnight."),
    ("d3", "No chest pain today."),
];

fn engine() -> Engine {
    let pipeline = TextPipeline::default();
    let rows = [
        ("C1", "heart rate", "P"),
        ("C1", "HR", "A"),
        ("C2", "hazard ratio", "P"),
        ("C2", "HR", "A"),
        ("C3", "chest pain", "P"),
    ];
    let rows = rows.iter().enumerate().map(|(i, (c, n, s))| {
        let mut r = ConceptRow::new(c, n);
        r.name_status = s.to_string();
        (i + 1, Ok(r))
    });
    let cdb = ConceptDatabase::build(rows, &pipeline).unwrap().cdb;
    let words: Vec<String> = DOCS.iter().flat_map(|(_, t)| pipeline.word_norms(t)).collect();
    let mut vocab = Vocabulary::build(words, 1, 16).unwrap();
    vocab.fill_fallback_vectors();
    Engine::new(vocab, cdb, pipeline, EngineConfig::default())
}

fn app_with(config: ServiceConfig, engine: Option<Engine>) -> (Arc<AppState>, Router) {
    let state = AppState::new(engine, config).unwrap();
    (state.clone(), router(state))
}

fn app() -> (Arc<AppState>, Router) {
    app_with(ServiceConfig::default(), Some(engine()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn parse(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn create_project(app: &Router, online: bool) {
    create_project_with(app, json!({"online_learning": online})).await;
}

async fn create_project_with(app: &Router, extra: Value) {
    let documents: Vec<Value> = DOCS.iter().map(|(id, t)| json!({"doc_id": id, "text": t})).collect();
    let mut body = json!({"id": "p1", "name": "Cardio", "documents": documents});
    for (k, v) in extra.as_object().unwrap() {
        body[k] = v.clone();
    }
    let (status, body) = call(app, "POST", "/api/projects", Some(body), None).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
}

fn feedback(doc: &str, start: usize, end: usize, cui: &str, verdict: &str) -> Value {
    json!({"doc_id": doc, "start": start, "end": end, "cui": cui, "verdict": verdict})
}

#[tokio::test]
async fn annotate_matches_library() {
    let (_, app) = app();
    let lib = engine();
    for text in ["", DOCS[0].1, DOCS[1].1, "heart  rate\nHR chest pain"] {
        let (status, body) = call(&app, "POST", "/api/annotate", Some(json!({"text": text})), None).await;
        assert_eq!(status, StatusCode::OK);
        let expected = serde_json::to_vec(&AnnotateResponse {
            mentions: lib.annotate_mentions(text),
        })
        .unwrap();
        assert_eq!(body, expected);
    }
    let (_, body) = call(&app, "POST", "/api/annotate", Some(json!({"text": ""})), None).await;
    assert_eq!(parse(&body), json!({"mentions": []}));
}

#[tokio::test]
async fn annotate_errors() {
    let (_, app) = app();
    let req = Request::post("/api/annotate")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/api/annotate", Some(json!({"txt": "x"})), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let big = "a".repeat((1 << 20) + 10);
    let (status, _) = call(&app, "POST", "/api/annotate", Some(json!({"text": big})), None).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);

    let (_, empty) = app_with(ServiceConfig::default(), None);
    let (status, _) = call(&empty, "POST", "/api/annotate", Some(json!({"text": "x"})), None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn review_queue_flags_and_completion() {
    let (_, app) = app();
    create_project_with(&app, json!({"online_learning": true, "auto_accept": 0.3})).await;
    // Train C3 on its own context so the document scores above the threshold.
    for _ in 0..3 {
        let (s, b) = call(&app, "POST", "/api/projects/p1/feedback", Some(json!({
            "doc_id": "d3", "start": 3, "end": 13, "cui": "C3", "verdict": "correct",
            "annotator": "trainer", "overwrite": true
        })), None).await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    }
    let (status, body) = call(&app, "GET", "/api/projects/p1/next_document?annotator=ann", None, None).await;
    assert_eq!(status, StatusCode::OK);
    let doc = parse(&body);
    assert_eq!(doc["doc_id"], "d1");
    let m = &doc["mentions"][0];
    assert_eq!(m["cui"], "C1");
    assert_eq!(m["untrained"], true);
    assert_eq!(m["flag"], "needs_input");

    for d in ["d1", "d2"] {
        let (s, _) = call(&app, "POST", "/api/projects/p1/complete", Some(json!({"doc_id": d, "annotator": "ann"})), None).await;
        assert_eq!(s, StatusCode::NO_CONTENT);
    }
    let (_, body) = call(&app, "GET", "/api/projects/p1/next_document?annotator=ann", None, None).await;
    let doc = parse(&body);
    assert_eq!(doc["doc_id"], "d3");
    let m = &doc["mentions"][0];
    assert!(m["confidence"].as_f64().unwrap() >= 0.3);
    assert_eq!(m["flag"], "auto_accepted");

    let (s, _) = call(&app, "POST", "/api/projects/p1/complete", Some(json!({"doc_id": "d3", "annotator": "ann"})), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "GET", "/api/projects/p1/next_document?annotator=ann", None, None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "GET", "/api/projects/nope/next_document?annotator=ann", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concept_filter_restricts_mentions() {
    let (_, app) = app();
    let (status, _) = call(&app, "POST", "/api/projects", Some(json!({
        "id": "f", "name": "f", "documents": [{"doc_id": "x", "text": "chest pain and heart rate"}],
        "concept_filter": ["C3"]
    })), None).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, body) = call(&app, "GET", "/api/projects/f/next_document", None, None).await;
    let cuis: Vec<Value> = parse(&body)["mentions"].as_array().unwrap().iter().map(|m| m["cui"].clone()).collect();
    assert_eq!(cuis, vec![json!("C3")]);
    let (status, _) = call(&app, "POST", "/api/projects", Some(json!({
        "id": "g", "name": "g", "documents": [{"doc_id": "x", "text": "t"}], "concept_filter": ["C9"]
    })), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn feedback_contract() {
    let (_, app) = app();
    create_project(&app, true).await;
    let (s, b) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d1", 8, 18, "C1", "correct")), None).await;
    assert_eq!(s, StatusCode::OK);
    let r = parse(&b);
    assert_eq!(r["train_count"], 1);
    assert_eq!(r["trained"], true);

    let (s, b) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d2", 24, 26, "C2", "incorrect")), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse(&b)["train_count"], 0);

    let (s, _) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d1", 8, 18, "C1", "correct")), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let mut over = feedback("d1", 8, 18, "C1", "correct");
    over["overwrite"] = json!(true);
    let (s, b) = call(&app, "POST", "/api/projects/p1/feedback", Some(over), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse(&b)["replaced"], true);

    let (s, _) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d1", 40, 400, "C1", "correct")), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d1", 8, 18, "C404", "correct")), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d9", 0, 1, "C1", "correct")), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/projects/p9/feedback", Some(feedback("d1", 0, 1, "C1", "correct")), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d1", 0, 1, "C1", "maybe")), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn feedback_without_online_learning_only_persists() {
    let (state, app) = app();
    create_project(&app, false).await;
    let before = state.model_bytes().await.unwrap();
    let (s, b) = call(&app, "POST", "/api/projects/p1/feedback", Some(feedback("d1", 8, 18, "C1", "correct")), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse(&b)["train_count"], 0);
    assert_eq!(state.model_bytes().await.unwrap(), before);
}

#[tokio::test]
async fn export_is_schema_valid_and_replays() {
    let (_, app) = app();
    create_project(&app, false).await;
    let mut f = feedback("d1", 8, 18, "C1", "correct");
    f["meta"] = json!({"Presence": "Affirmed"});
    f["annotator"] = json!("a");
    call(&app, "POST", "/api/projects/p1/feedback", Some(f), None).await;
    let mut g = feedback("d1", 8, 18, "C1", "incorrect");
    g["annotator"] = json!("b");
    call(&app, "POST", "/api/projects/p1/feedback", Some(g), None).await;
    let mut manual = feedback("d2", 24, 26, "C1", "correct");
    manual["manually_added"] = json!(true);
    call(&app, "POST", "/api/projects/p1/feedback", Some(manual), None).await;

    let (s, body) = call(&app, "GET", "/api/projects/p1/export", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let value = parse(&body);
    let schema: Value = serde_json::from_str(EXPORT_SCHEMA).unwrap();
    assert!(jsonschema::validator_for(&schema).unwrap().is_valid(&value));
    let export: AnnotationExport = serde_json::from_value(value).unwrap();
    export.validate().unwrap();
    // Both annotators' verdicts on the disputed span are kept.
    assert_eq!(export.projects[0].documents[0].annotations.len(), 2);

    let mut e = engine();
    let stats = supervised_train(&mut e, &export, TrainOptions::default());
    assert_eq!(e.cdb.get("C1").unwrap().train_count, 2);
    assert_eq!(stats.incorrect, 1);
    let (_, again) = call(&app, "GET", "/api/projects/p1/export", None, None).await;
    assert_eq!(again, body);

    let (s, body) = call(&app, "POST", "/api/projects", Some(json!({"id": "e", "name": "e", "documents": [{"doc_id": "z", "text": "nothing"}]})), None).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    let (_, body) = call(&app, "GET", "/api/projects/e/export", None, None).await;
    let empty: AnnotationExport = serde_json::from_slice(&body).unwrap();
    assert!(empty.projects[0].documents[0].annotations.is_empty());
}

#[tokio::test]
async fn snapshot_feedback_rollback_is_bit_equal() {
    let (state, app) = app();
    create_project(&app, true).await;
    let (s, _) = call(&app, "POST", "/api/models/rollback", None, None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "POST", "/api/models/snapshot", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let snap = state.model_bytes().await.unwrap();
    for (i, (doc, start, end, cui)) in [
        ("d1", 8, 18, "C1"),
        ("d2", 0, 10, "C3"),
        ("d3", 3, 13, "C3"),
        ("d2", 24, 26, "C1"),
        ("d1", 0, 7, "C1"),
    ]
    .into_iter()
    .enumerate()
    {
        let mut f = feedback(doc, start, end, cui, "correct");
        f["annotator"] = json!(format!("a{i}"));
        let (s, _) = call(&app, "POST", "/api/projects/p1/feedback", Some(f), None).await;
        assert_eq!(s, StatusCode::OK);
    }
    assert_ne!(state.model_bytes().await.unwrap(), snap);
    let (s, _) = call(&app, "POST", "/api/models/rollback", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state.model_bytes().await.unwrap(), snap);
    let (s, body) = call(&app, "POST", "/api/models/metrics", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse(&body)["total_train_count"], 0);
    let (s, _) = call(&app, "POST", "/api/models/explode", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn feedback_replay_is_deterministic() {
    let mut finals = Vec::new();
    for _ in 0..2 {
        let (state, app) = app();
        create_project(&app, true).await;
        for (i, (doc, start, end, cui)) in [("d1", 8, 18, "C1"), ("d3", 3, 13, "C3"), ("d2", 24, 26, "C2")]
            .into_iter()
            .enumerate()
        {
            let mut f = feedback(doc, start, end, cui, "correct");
            f["annotator"] = json!(format!("a{i}"));
            call(&app, "POST", "/api/projects/p1/feedback", Some(f), None).await;
        }
        finals.push(state.model_bytes().await.unwrap());
    }
    assert_eq!(finals[0], finals[1]);
}

#[tokio::test]
async fn bearer_tokens_identify_annotators() {
    let config = ServiceConfig::from_toml("[annotators]\nalice = \"ta\"\nbob = \"tb\"\n").unwrap();
    let (_, app) = app_with(config, Some(engine()));
    let (s, _) = call(&app, "GET", "/api/projects", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&app, "GET", "/api/projects", None, Some("bad")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&app, "POST", "/api/projects", Some(json!({
        "id": "p", "name": "p", "documents": [{"doc_id": "x", "text": "heart rate"}], "annotators": ["alice"]
    })), Some("ta")).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = call(&app, "GET", "/api/projects/p/next_document?annotator=alice", None, Some("tb")).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&app, "GET", "/api/projects/p/next_document", None, Some("tb")).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&app, "GET", "/api/projects/p/next_document", None, Some("ta")).await;
    assert_eq!(s, StatusCode::OK);
    // Annotation stays open.
    let (s, _) = call(&app, "POST", "/api/annotate", Some(json!({"text": "HR"})), None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn concept_search() {
    let (_, app) = app();
    let (s, body) = call(&app, "GET", "/api/concepts?q=hear", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse(&body), json!([{"cui": "C1", "name": "heart rate"}]));
}
