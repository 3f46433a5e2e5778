//! HTTP review service over a dataset directory.
//!
//! ```text
//! GET  /frames                       frame list with box counts and versions
//! GET  /frames/{id}/image            PNG
//! GET  /frames/{id}/annotations      canonical JSON, ETag = version token
//! PUT  /frames/{id}/annotations      needs If-Match; 409 on a stale token
//! POST /export                       accepted boxes to export.json
//! ```
//!
//! Edits persist to the dataset's `annotations.json` by atomic rename.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use sha2::{Digest, Sha256};

use selective_ae::annotations::{AnnotationSet, BoxSource, FrameAnnotations, Verdict};
use selective_ae::frame::encode_png;
use selective_ae::synth::{Dataset, ANNOTATIONS_FILE};

use crate::output::write_atomic;

pub const EXPORT_FILE: &str = "export.json";

pub struct ReviewState {
    dataset: Dataset,
    annotations: Mutex<AnnotationSet>,
}

impl ReviewState {
    /// Opens `root`; model detections, if given, are appended to each frame
    /// as unreviewed boxes unless that frame already holds model boxes.
    pub fn open(root: &Path, detections: Option<&Path>) -> Result<Self> {
        let dataset = Dataset::open(root).with_context(|| format!("opening dataset {}", root.display()))?;
        let mut set = AnnotationSet(
            dataset
                .manifest
                .frames
                .iter()
                .map(|f| {
                    dataset
                        .annotations
                        .get(&f.frame_id)
                        .cloned()
                        .unwrap_or_else(|| FrameAnnotations::new(f.frame_id.clone(), Vec::new()))
                })
                .collect(),
        );
        if let Some(path) = detections {
            let det = AnnotationSet::load(path).with_context(|| format!("loading detections {}", path.display()))?;
            for frame in det.0 {
                if let Some(target) = set.get_mut(&frame.frame_id) {
                    if !target.boxes.iter().any(|b| b.source == BoxSource::Model) {
                        target.boxes.extend(frame.boxes.into_iter().map(|mut b| {
                            b.source = BoxSource::Model;
                            b.verdict = Verdict::Unreviewed;
                            b
                        }));
                    }
                }
            }
        }
        Ok(Self {
            dataset,
            annotations: Mutex::new(set),
        })
    }

    pub fn root(&self) -> &Path {
        &self.dataset.root
    }

    fn persist(&self, set: &AnnotationSet) -> Result<()> {
        write_atomic(
            &self.dataset.root.join(ANNOTATIONS_FILE),
            (set.to_canonical_json()? + "\n").as_bytes(),
        )
    }
}

/// Version token: a digest of the frame's canonical JSON.
pub fn version_token(frame: &FrameAnnotations) -> Result<String> {
    let digest = Sha256::digest(frame.to_canonical_json()?.as_bytes());
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    Ok(format!("\"{hex}\""))
}

/// Accepted boxes only, one record per frame.
pub fn accepted_only(set: &AnnotationSet) -> AnnotationSet {
    AnnotationSet(
        set.0
            .iter()
            .map(|f| {
                FrameAnnotations::new(
                    f.frame_id.clone(),
                    f.boxes.iter().filter(|b| b.verdict == Verdict::Accepted).cloned().collect(),
                )
            })
            .collect(),
    )
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"))
    }
}

impl From<selective_ae::Error> for ApiError {
    fn from(e: selective_ae::Error) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown frame {id:?}"))
}

#[derive(Serialize)]
struct FrameSummary {
    frame_id: String,
    boxes: usize,
    accepted: usize,
    rejected: usize,
    unreviewed: usize,
    version: String,
}

async fn list_frames(State(state): State<Arc<ReviewState>>) -> ApiResult<Json<Vec<FrameSummary>>> {
    let set = state.annotations.lock().expect("annotation lock");
    let count = |f: &FrameAnnotations, v: Verdict| f.boxes.iter().filter(|b| b.verdict == v).count();
    let list = set
        .0
        .iter()
        .map(|f| {
            Ok(FrameSummary {
                frame_id: f.frame_id.clone(),
                boxes: f.boxes.len(),
                accepted: count(f, Verdict::Accepted),
                rejected: count(f, Verdict::Rejected),
                unreviewed: count(f, Verdict::Unreviewed),
                version: version_token(f)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Json(list))
}

async fn frame_image(State(state): State<Arc<ReviewState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    if state.dataset.frame_path(&id).is_none() {
        return Err(not_found(&id));
    }
    let frame = state.dataset.load_frame(&id)?;
    let png = encode_png(&frame.to_gray8(1.0))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn annotations_response(status: StatusCode, frame: &FrameAnnotations) -> ApiResult<Response> {
    let body = frame.to_canonical_json()?;
    let etag = HeaderValue::from_str(&version_token(frame)?).map_err(|e| anyhow::anyhow!(e))?;
    Ok((
        status,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json")), (header::ETAG, etag)],
        body,
    )
        .into_response())
}

async fn get_annotations(
    State(state): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let set = state.annotations.lock().expect("annotation lock");
    let frame = set.get(&id).ok_or_else(|| not_found(&id))?;
    annotations_response(StatusCode::OK, frame)
}

async fn put_annotations(
    State(state): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let incoming: FrameAnnotations = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid annotations: {e}")))?;
    incoming
        .validate()
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    if incoming.frame_id != id {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("body frame_id {:?} does not match {id:?}", incoming.frame_id),
        ));
    }
    let mut set = state.annotations.lock().expect("annotation lock");
    let current = set.get(&id).ok_or_else(|| not_found(&id))?;
    let token = version_token(current)?;
    match headers.get(header::IF_MATCH).map(|v| v.to_str().unwrap_or("")) {
        None => {
            return Err(ApiError(
                StatusCode::PRECONDITION_REQUIRED,
                "If-Match with the current version token is required".into(),
            ))
        }
        Some(given) if given != token && given != "*" => {
            return Err(ApiError(
                StatusCode::CONFLICT,
                format!("stale version {given}; current is {token}"),
            ))
        }
        Some(_) => {}
    }
    let mut updated = set.clone();
    *updated.get_mut(&id).expect("present") = incoming;
    state.persist(&updated)?;
    *set = updated;
    annotations_response(StatusCode::OK, set.get(&id).expect("present"))
}

async fn export(State(state): State<Arc<ReviewState>>) -> ApiResult<Json<serde_json::Value>> {
    let set = state.annotations.lock().expect("annotation lock");
    let accepted = accepted_only(&set);
    let path = state.dataset.root.join(EXPORT_FILE);
    write_atomic(&path, (accepted.to_canonical_json()? + "\n").as_bytes())?;
    let boxes: usize = accepted.0.iter().map(|f| f.boxes.len()).sum();
    Ok(Json(serde_json::json!({
        "path": path,
        "frames": accepted.0.len(),
        "boxes": boxes,
    })))
}

pub fn router(state: Arc<ReviewState>, ui: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/frames", get(list_frames))
        .route("/frames/{id}/image", get(frame_image))
        .route("/frames/{id}/annotations", get(get_annotations).put(put_annotations))
        .route("/export", post(export))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until interrupted.
pub fn serve(state: ReviewState, bind: SocketAddr, ui: Option<PathBuf>) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        eprintln!("review service on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state), ui))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
