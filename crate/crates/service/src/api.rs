//! HTTP review service over a directory of session bundles.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use retrace_core::annotate::{
    append_log, current_state, manual_record, read_log, supersede_status, Annotation, AnnotationBody, AnnotationKind,
    EditError, Provenance, Status,
};
use retrace_core::pipeline::scatter_csv;
use retrace_core::session::{EventRecord, FrameRecord, SessionManifest};
use retrace_core::{Error, SessionBundle, Timestamp};

pub const DEFAULT_AUTHOR: &str = "researcher";

/// Error response: `{"error": code, "message": text, ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<(&'static str, Value)>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), extra: None }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn with(mut self, key: &'static str, value: Value) -> Self {
        self.extra = Some((key, value));
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let stage = e.stage();
        let inner = match &e {
            Error::Stage { source, .. } => source.as_ref(),
            other => other,
        };
        let (status, code) = match inner {
            Error::IndexOutOfRange { .. } => (StatusCode::NOT_FOUND, "frame_not_found"),
            Error::MissingFile(_) => (StatusCode::NOT_FOUND, "missing_file"),
            Error::SchemaViolation { .. } | Error::UnsortedEvents { .. } | Error::CorruptPatch { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_bundle")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let err = ApiError::new(status, code, e.to_string());
        match stage {
            Some(s) => err.with("stage", json!(s)),
            None => err,
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code, "message": self.message});
        if let Some((k, v)) = self.extra {
            body[k] = v;
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Session directories under a data root, with one writer lock per session.
pub struct AppState {
    root: PathBuf,
    index: RwLock<BTreeMap<String, PathBuf>>,
    writers: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        AppState {
            root: root.into(),
            index: RwLock::new(BTreeMap::new()),
            writers: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Rescans the root for bundle directories and returns their manifests by id.
    fn scan(&self) -> ApiResult<BTreeMap<String, (PathBuf, SessionManifest)>> {
        let entries = std::fs::read_dir(&self.root)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "root_unreadable", format!("{}: {e}", self.root.display())))?;
        let mut found = BTreeMap::new();
        for entry in entries.flatten() {
            let dir = entry.path();
            let Ok(bytes) = std::fs::read(dir.join("manifest.json")) else { continue };
            let Ok(manifest) = serde_json::from_slice::<SessionManifest>(&bytes) else { continue };
            found.insert(manifest.session_id.clone(), (dir, manifest));
        }
        *self.index.write().expect("index lock") = found.iter().map(|(k, (p, _))| (k.clone(), p.clone())).collect();
        Ok(found)
    }

    fn session_dir(&self, id: &str) -> ApiResult<PathBuf> {
        if let Some(p) = self.index.read().expect("index lock").get(id) {
            return Ok(p.clone());
        }
        self.scan()?
            .remove(id)
            .map(|(p, _)| p)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id:?}")))
    }

    async fn bundle(&self, id: &str) -> ApiResult<SessionBundle> {
        let dir = self.session_dir(id)?;
        Ok(tokio::task::spawn_blocking(move || SessionBundle::load(dir)).await??)
    }

    fn writer(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.writers.lock().expect("writer map").entry(id.to_string()).or_default().clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/frames", get(list_frames))
        .route("/sessions/{id}/frames/{file}", get(get_frame))
        .route("/sessions/{id}/events", get(get_events))
        .route("/sessions/{id}/annotations", get(get_annotations).post(post_annotation))
        .route("/sessions/{id}/annotations/{aid}", axum::routing::patch(patch_annotation))
        .route("/sessions/{id}/scatter.csv", get(get_scatter))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such endpoint") })
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(root: PathBuf, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {bind}: {e}"))?;
    eprintln!("serving {} on http://{}", root.display(), listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::new(root)))).await?;
    Ok(())
}

async fn list_sessions(State(st): State<Arc<AppState>>) -> ApiResult<Json<Vec<SessionManifest>>> {
    Ok(Json(st.scan()?.into_values().map(|(_, m)| m).collect()))
}

async fn get_session(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionManifest>> {
    Ok(Json(st.bundle(&id).await?.manifest))
}

async fn list_frames(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Vec<FrameRecord>>> {
    Ok(Json(st.bundle(&id).await?.frames))
}

async fn get_frame(
    State(st): State<Arc<AppState>>,
    UrlPath((id, file)): UrlPath<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let index: usize = file
        .strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ApiError::bad_request(format!("expected <index>.png, got {file:?}")))?;
    let bundle = st.bundle(&id).await?;
    let png = tokio::task::spawn_blocking(move || bundle.reconstruct_frame(index).and_then(|img| img.to_png())).await??;
    let etag = format!("\"{}\"", retrace_core::sha256_hex(&png));
    let fresh = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"));
    if fresh {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response());
    }
    Ok(([(header::CONTENT_TYPE, "image/png".to_string()), (header::ETAG, etag)], png).into_response())
}

#[derive(Debug, Deserialize)]
struct EventQuery {
    from: Option<u64>,
    to: Option<u64>,
    /// Comma-separated event type names.
    #[serde(rename = "type")]
    kind: Option<String>,
}

async fn get_events(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventQuery>,
) -> ApiResult<Json<Vec<EventRecord>>> {
    let bundle = st.bundle(&id).await?;
    let types: Option<Vec<&str>> = q.kind.as_deref().map(|k| k.split(',').map(str::trim).collect());
    let events = bundle
        .events
        .into_iter()
        .filter(|e| q.from.is_none_or(|f| e.t.0 >= f) && q.to.is_none_or(|t| e.t.0 <= t))
        .filter(|e| types.as_ref().is_none_or(|ts| ts.contains(&e.kind.type_name())))
        .collect();
    Ok(Json(events))
}

#[derive(Debug, Deserialize)]
struct AnnotationQuery {
    kind: Option<String>,
    status: Option<String>,
}

async fn current(st: &AppState, id: &str) -> ApiResult<(PathBuf, Vec<Annotation>)> {
    let path = st.session_dir(id)?.join("annotations.jsonl");
    let p = path.clone();
    let log = tokio::task::spawn_blocking(move || read_log(&p)).await??;
    Ok((path, log))
}

async fn get_annotations(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotationQuery>,
) -> ApiResult<Json<Vec<Annotation>>> {
    let kind = match q.kind.as_deref() {
        Some(k) => Some(AnnotationKind::parse(k).ok_or_else(|| ApiError::bad_request(format!("unknown kind {k:?}")))?),
        None => None,
    };
    let status = match q.status.as_deref() {
        Some(s) => Some(Status::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown status {s:?}")))?),
        None => None,
    };
    let (_, log) = current(&st, &id).await?;
    let out = current_state(&log)
        .into_iter()
        .filter(|a| kind.is_none_or(|k| a.kind() == k) && status.is_none_or(|s| a.status == s))
        .collect();
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct NewAnnotation {
    #[serde(flatten)]
    body: AnnotationBody,
    t_start: Timestamp,
    #[serde(default)]
    t_end: Option<Timestamp>,
    #[serde(default)]
    author: Option<String>,
}

#[derive(Debug, Deserialize)]
struct StatusChange {
    status: Status,
    #[serde(default)]
    author: Option<String>,
}

fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn author_of(given: Option<String>, headers: &HeaderMap) -> String {
    given
        .or_else(|| headers.get("x-author").and_then(|v| v.to_str().ok()).map(str::to_string))
        .filter(|a| !a.trim().is_empty())
        .unwrap_or_else(|| DEFAULT_AUTHOR.to_string())
}

async fn post_annotation(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Annotation>)> {
    let req: NewAnnotation = parse_body(&body)?;
    let author = author_of(req.author, &headers);
    let draft = Annotation {
        id: String::new(),
        session_id: id.clone(),
        body: req.body,
        t_start: req.t_start,
        t_end: req.t_end,
        status: Status::Manual,
        provenance: Provenance::Human { author: author.clone() },
        supersedes: None,
    };
    let writer = st.writer(&id);
    let _guard = writer.lock().await;
    let (path, log) = current(&st, &id).await?;
    let rec = manual_record(draft, &author, log.len())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_annotation", e.to_string()))?;
    let saved = rec.clone();
    tokio::task::spawn_blocking(move || append_log(&path, &[saved])).await??;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn patch_annotation(
    State(st): State<Arc<AppState>>,
    UrlPath((id, aid)): UrlPath<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Annotation>> {
    let req: StatusChange = parse_body(&body)?;
    if req.status == Status::Manual {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_status", "status manual is reserved for new annotations"));
    }
    let author = author_of(req.author, &headers);
    let writer = st.writer(&id);
    let _guard = writer.lock().await;
    let (path, log) = current(&st, &id).await?;
    let rec = supersede_status(&log, &aid, req.status, &author).map_err(|e| match e {
        EditError::NotFound => ApiError::new(StatusCode::NOT_FOUND, "annotation_not_found", format!("no annotation {aid:?}")),
        EditError::Superseded(next) => {
            ApiError::new(StatusCode::CONFLICT, "superseded", format!("annotation {aid:?} was superseded by {next:?}"))
                .with("superseded_by", json!(next))
        }
    })?;
    let saved = rec.clone();
    tokio::task::spawn_blocking(move || append_log(&path, &[saved])).await??;
    Ok(Json(rec))
}

async fn get_scatter(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let bundle = st.bundle(&id).await?;
    let csv = tokio::task::spawn_blocking(move || {
        let log = read_log(&bundle.annotations_path())?;
        scatter_csv(&bundle, &current_state(&log))
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}
