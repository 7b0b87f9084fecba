//! HTTP service: annotation, review projects, feedback with online learning,
//! export, and model snapshots.

pub mod config;
pub mod error;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clinlink_core::export::{
    AnnotationExport, ExportAnnotation, ExportDocument, ExportProject, MentionRecord, EXPORT_SCHEMA_VERSION,
};
use clinlink_core::meta::MetaTask;
use clinlink_core::model::{model_from_bytes, model_to_bytes};
use clinlink_core::trainer::{TrainStats, Trainer};
use clinlink_core::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::RwLock;

pub use config::ServiceConfig;
pub use error::{ApiError, ServiceError};
use store::{Feedback, Insert, ProjectSettings, Store, StoredDocument};

type ApiResult<T> = Result<T, ApiError>;

struct Model {
    engine: Engine,
    trainer: Trainer,
}

struct Snapshot {
    bytes: Vec<u8>,
    sha256: String,
}

pub struct AppState {
    config: ServiceConfig,
    /// Readers annotate concurrently; writers queue in arrival order.
    model: RwLock<Option<Model>>,
    store: Mutex<Store>,
    snapshots: Mutex<Vec<Snapshot>>,
}

impl AppState {
    pub fn new(engine: Option<Engine>, config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let store = Store::open(config.database.as_deref())?;
        if let Some(dir) = &config.snapshot_dir {
            std::fs::create_dir_all(dir)?;
        }
        let model = engine.map(|engine| Model {
            trainer: Trainer::new(&engine.vocab, config.seed),
            engine,
        });
        Ok(Arc::new(Self {
            config,
            model: RwLock::new(model),
            store: Mutex::new(store),
            snapshots: Mutex::new(Vec::new()),
        }))
    }

    fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Serialized bytes of the loaded model, for comparison in tests.
    pub async fn model_bytes(&self) -> Option<Vec<u8>> {
        let guard = self.model.read().await;
        guard.as_ref().and_then(|m| model_to_bytes(&m.engine).ok())
    }

    /// Resolve the caller. With authentication off the claimed name (or
    /// `anonymous`) is used; otherwise the bearer token decides and a
    /// conflicting claim is refused.
    fn annotator(&self, headers: &HeaderMap, claimed: Option<&str>) -> ApiResult<String> {
        if self.config.annotators.is_empty() {
            return Ok(claimed.unwrap_or("anonymous").to_string());
        }
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))?;
        let name = self
            .config
            .annotator_for_token(token.trim())
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown token"))?;
        match claimed {
            Some(c) if c != name => Err(ApiError::new(
                StatusCode::FORBIDDEN,
                format!("token belongs to '{name}', not '{c}'"),
            )),
            _ => Ok(name.to_string()),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/api/annotate", post(annotate))
        .route("/api/concepts", get(search_concepts))
        .route("/api/projects", get(list_projects).post(create_project))
        .route("/api/projects/{id}", get(project_summary))
        .route("/api/projects/{id}/next_document", get(next_document))
        .route("/api/projects/{id}/complete", post(complete_document))
        .route("/api/projects/{id}/feedback", post(feedback))
        .route("/api/projects/{id}/export", get(export))
        .route("/api/models/{action}", post(model_action))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Bind and serve until interrupted.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Response body of `/api/annotate`; the library equivalent is
/// `serde_json::to_vec(&AnnotateResponse { mentions: engine.annotate_mentions(text) })`.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AnnotateResponse {
    pub mentions: Vec<MentionRecord>,
}

#[derive(Deserialize)]
struct AnnotateRequest {
    text: String,
}

async fn annotate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AnnotateRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let guard = state.model.read().await;
    let model = guard.as_ref().ok_or_else(ApiError::no_model)?;
    let out = AnnotateResponse {
        mentions: model.engine.annotate_mentions(&req.text),
    };
    let bytes = serde_json::to_vec(&out).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Deserialize)]
struct ConceptQuery {
    q: String,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    20
}

#[derive(Serialize)]
struct ConceptHit {
    cui: String,
    name: String,
}

/// Concepts having a name that contains every word of `q`.
async fn search_concepts(
    State(state): State<Arc<AppState>>,
    query: Result<Query<ConceptQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<ConceptHit>>> {
    let Query(q) = query?;
    let guard = state.model.read().await;
    let model = guard.as_ref().ok_or_else(ApiError::no_model)?;
    let words = model.engine.pipeline.name_tokens(&q.q);
    if words.is_empty() {
        return Ok(Json(Vec::new()));
    }
    let mut hits = Vec::new();
    'concepts: for (cui, record) in model.engine.cdb.concepts() {
        for name in &record.names {
            if words.iter().all(|w| name.normalized_tokens.iter().any(|t| t.contains(w.as_str()))) {
                hits.push(ConceptHit {
                    cui: cui.clone(),
                    name: name.raw.clone(),
                });
                if hits.len() >= q.limit {
                    break 'concepts;
                }
                continue 'concepts;
            }
        }
    }
    Ok(Json(hits))
}

#[derive(Deserialize)]
struct NewProject {
    id: String,
    name: String,
    documents: Vec<StoredDocument>,
    #[serde(default)]
    concept_filter: BTreeSet<String>,
    #[serde(default)]
    meta_tasks: Vec<MetaTask>,
    #[serde(default)]
    annotators: BTreeSet<String>,
    #[serde(default)]
    online_learning: bool,
    auto_accept: Option<f64>,
}

async fn create_project(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<NewProject>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    state.annotator(&headers, None)?;
    let Json(p) = body?;
    if p.id.is_empty() || p.documents.is_empty() {
        return Err(ApiError::unprocessable("project needs an id and at least one document"));
    }
    let ids: BTreeSet<&str> = p.documents.iter().map(|d| d.doc_id.as_str()).collect();
    if ids.len() != p.documents.len() {
        return Err(ApiError::unprocessable("duplicate doc_id"));
    }
    let auto_accept = p.auto_accept.unwrap_or(state.config.auto_accept);
    if !(0.0..=1.0).contains(&auto_accept) {
        return Err(ApiError::unprocessable("auto_accept outside [0, 1]"));
    }
    for t in &p.meta_tasks {
        t.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    }
    {
        let guard = state.model.read().await;
        if let Some(m) = guard.as_ref() {
            if let Some(bad) = p.concept_filter.iter().find(|c| m.engine.cdb.get(c).is_none()) {
                return Err(ApiError::unprocessable(format!("unknown concept '{bad}' in filter")));
            }
        }
    }
    let settings = ProjectSettings {
        name: p.name,
        concept_filter: p.concept_filter,
        meta_tasks: p.meta_tasks,
        annotators: p.annotators,
        online_learning: p.online_learning,
        auto_accept,
    };
    if !state.store().create_project(&p.id, &settings, &p.documents)? {
        return Err(ApiError::conflict(format!("project '{}' exists", p.id)));
    }
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "id": p.id }))))
}

async fn list_projects(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Vec<String>>> {
    state.annotator(&headers, None)?;
    Ok(Json(state.store().project_ids()?))
}

fn project_for(state: &AppState, id: &str, annotator: &str) -> ApiResult<ProjectSettings> {
    let settings = state
        .store()
        .project(id)?
        .ok_or_else(|| ApiError::not_found(format!("project '{id}'")))?;
    if !settings.annotators.is_empty() && !settings.annotators.contains(annotator) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            format!("'{annotator}' is not an annotator of '{id}'"),
        ));
    }
    Ok(settings)
}

async fn project_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    let who = state.annotator(&headers, None)?;
    let settings = project_for(&state, &id, &who)?;
    let documents = state.store().documents(&id)?.len();
    Ok(Json(serde_json::json!({ "id": id, "settings": settings, "documents": documents })))
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewFlag {
    AutoAccepted,
    NeedsInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewMention {
    pub start: usize,
    pub end: usize,
    pub cui: String,
    pub confidence: f64,
    pub untrained: bool,
    pub flag: ReviewFlag,
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDocument {
    pub doc_id: String,
    pub text: String,
    pub mentions: Vec<ReviewMention>,
}

/// Untrained links always need input; others are auto-accepted at or above
/// the project threshold.
pub fn review_flag(confidence: f64, untrained: bool, auto_accept: f64) -> ReviewFlag {
    if !untrained && confidence >= auto_accept {
        ReviewFlag::AutoAccepted
    } else {
        ReviewFlag::NeedsInput
    }
}

async fn next_document(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    query: Result<Query<AnnotatorQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let who = state.annotator(&headers, q.annotator.as_deref())?;
    let settings = project_for(&state, &id, &who)?;
    let Some(doc) = state.store().next_unreviewed(&id, &who)? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let guard = state.model.read().await;
    let model = guard.as_ref().ok_or_else(ApiError::no_model)?;
    let mentions = model
        .engine
        .annotate_document(&doc.doc_id, &doc.text)
        .1
        .into_iter()
        .filter_map(|m| {
            let linked = m.linked?;
            if !settings.concept_filter.is_empty() && !settings.concept_filter.contains(&linked.concept_id) {
                return None;
            }
            Some(ReviewMention {
                start: m.start,
                end: m.end,
                flag: review_flag(linked.confidence, linked.untrained, settings.auto_accept),
                cui: linked.concept_id,
                confidence: linked.confidence,
                untrained: linked.untrained,
                meta: m.meta,
            })
        })
        .collect();
    Ok(Json(ReviewDocument {
        doc_id: doc.doc_id,
        text: doc.text,
        mentions,
    })
    .into_response())
}

#[derive(Deserialize)]
struct CompleteRequest {
    doc_id: String,
    annotator: Option<String>,
}

async fn complete_document(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<CompleteRequest>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let Json(req) = body?;
    let who = state.annotator(&headers, req.annotator.as_deref())?;
    project_for(&state, &id, &who)?;
    let store = state.store();
    if store.document(&id, &req.doc_id)?.is_none() {
        return Err(ApiError::not_found(format!("document '{}'", req.doc_id)));
    }
    store.mark_reviewed(&id, &req.doc_id, &who)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub cui: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    #[serde(default)]
    pub annotator: Option<String>,
    #[serde(default)]
    pub manually_added: bool,
    #[serde(default)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub recorded: bool,
    pub replaced: bool,
    pub trained: bool,
    /// Training count of the concept after this feedback.
    pub train_count: Option<u64>,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<Json<FeedbackResponse>> {
    let Json(req) = body?;
    let who = state.annotator(&headers, req.annotator.as_deref())?;
    let settings = project_for(&state, &id, &who)?;
    let doc = state
        .store()
        .document(&id, &req.doc_id)?
        .ok_or_else(|| ApiError::not_found(format!("document '{}'", req.doc_id)))?;
    if req.start >= req.end || req.end > doc.text.chars().count() {
        return Err(ApiError::unprocessable(format!("span {}..{} out of bounds", req.start, req.end)));
    }
    // The write lock is held from validation to update so that concurrent
    // feedback is applied strictly in arrival order.
    let mut guard = state.model.write().await;
    let model = guard.as_mut().ok_or_else(ApiError::no_model)?;
    if model.engine.cdb.get(&req.cui).is_none() {
        return Err(ApiError::unprocessable(format!("unknown concept '{}'", req.cui)));
    }
    let correct = req.verdict == Verdict::Correct;
    let record = Feedback {
        doc_id: req.doc_id.clone(),
        annotator: who,
        start: req.start,
        end: req.end,
        cui: req.cui.clone(),
        correct,
        manually_added: req.manually_added,
        meta: req.meta.clone(),
    };
    let replaced = match state.store().insert_feedback(&id, &record, req.overwrite)? {
        Insert::Duplicate => {
            return Err(ApiError::conflict(
                "feedback for this span exists; resend with overwrite",
            ))
        }
        Insert::Replaced => true,
        Insert::Created => false,
    };
    let mut trained = false;
    if settings.online_learning && correct {
        let Model { engine, trainer } = model;
        let mut stats = TrainStats::default();
        trained = trainer.train_annotation(
            engine,
            &doc.doc_id,
            &doc.text,
            (req.start, req.end),
            &req.cui,
            &mut stats,
        );
    }
    let train_count = model.engine.cdb.get(&req.cui).map(|c| c.train_count);
    Ok(Json(FeedbackResponse {
        recorded: true,
        replaced,
        trained,
        train_count,
    }))
}

/// Export a project's documents with every stored verdict. Disagreeing
/// annotators appear as separate annotations on the same span.
pub fn build_export(store: &Store, id: &str, settings: &ProjectSettings) -> rusqlite::Result<AnnotationExport> {
    let feedback = store.feedback(id)?;
    let mut by_doc: BTreeMap<String, Vec<ExportAnnotation>> = BTreeMap::new();
    for f in feedback {
        by_doc.entry(f.doc_id.clone()).or_default().push(ExportAnnotation {
            start: f.start,
            end: f.end,
            cui: f.cui,
            correct: f.correct,
            killed: false,
            manually_added: f.manually_added,
            meta: if f.correct { f.meta } else { BTreeMap::new() },
            annotator: Some(f.annotator),
        });
    }
    let documents = store
        .documents(id)?
        .into_iter()
        .map(|d| ExportDocument {
            annotations: by_doc.remove(&d.doc_id).unwrap_or_default(),
            doc_id: d.doc_id,
            text: d.text,
        })
        .collect();
    Ok(AnnotationExport {
        schema_version: EXPORT_SCHEMA_VERSION,
        projects: vec![ExportProject {
            id: id.to_string(),
            name: settings.name.clone(),
            documents,
        }],
    })
}

async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<AnnotationExport>> {
    let who = state.annotator(&headers, None)?;
    let settings = project_for(&state, &id, &who)?;
    Ok(Json(build_export(&state.store(), &id, &settings)?))
}

async fn model_action(
    State(state): State<Arc<AppState>>,
    Path(action): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    state.annotator(&headers, None)?;
    match action.as_str() {
        "snapshot" => {
            let guard = state.model.read().await;
            let model = guard.as_ref().ok_or_else(ApiError::no_model)?;
            let bytes = model_to_bytes(&model.engine)?;
            let sha256 = hex_digest(&bytes);
            let mut snaps = state.snapshots.lock().unwrap_or_else(|e| e.into_inner());
            let index = snaps.len();
            if let Some(dir) = &state.config.snapshot_dir {
                std::fs::write(dir.join(format!("snapshot-{index:04}.bin")), &bytes).map_err(ApiError::internal)?;
            }
            snaps.push(Snapshot {
                bytes,
                sha256: sha256.clone(),
            });
            Ok(Json(serde_json::json!({ "snapshot": index, "sha256": sha256 })))
        }
        "rollback" => {
            let mut guard = state.model.write().await;
            let model = guard.as_mut().ok_or_else(ApiError::no_model)?;
            let (index, bytes, sha256) = {
                let snaps = state.snapshots.lock().unwrap_or_else(|e| e.into_inner());
                let last = snaps.last().ok_or_else(|| ApiError::conflict("no snapshot to roll back to"))?;
                (snaps.len() - 1, last.bytes.clone(), last.sha256.clone())
            };
            let mut engine = model_from_bytes(&bytes)?;
            engine.meta = std::mem::take(&mut model.engine.meta);
            model.engine = engine;
            Ok(Json(serde_json::json!({ "restored": index, "sha256": sha256 })))
        }
        "metrics" => {
            let guard = state.model.read().await;
            let model = guard.as_ref().ok_or_else(ApiError::no_model)?;
            let cdb = &model.engine.cdb;
            let trained = cdb.concepts().values().filter(|c| c.is_trained()).count();
            let total: u64 = cdb.concepts().values().map(|c| c.train_count).sum();
            let snapshots = state.snapshots.lock().unwrap_or_else(|e| e.into_inner()).len();
            Ok(Json(serde_json::json!({
                "concepts": cdb.len(),
                "trained_concepts": trained,
                "total_train_count": total,
                "vocab_size": model.engine.vocab.len(),
                "meta_tasks": model.engine.meta.iter().map(|m| m.task.name.clone()).collect::<Vec<_>>(),
                "snapshots": snapshots,
                "feedback": state.store().feedback_count()?,
            })))
        }
        other => Err(ApiError::not_found(format!("unknown model action '{other}'"))),
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_follow_threshold_and_provenance() {
        assert_eq!(review_flag(0.95, false, 0.9), ReviewFlag::AutoAccepted);
        assert_eq!(review_flag(0.9, false, 0.9), ReviewFlag::AutoAccepted);
        assert_eq!(review_flag(0.31, false, 0.9), ReviewFlag::NeedsInput);
        assert_eq!(review_flag(1.0, true, 0.9), ReviewFlag::NeedsInput);
    }
}
