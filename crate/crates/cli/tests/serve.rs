use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use selective_ae::annotations::{AnnotationSet, BoundingBox, BoxSource, FrameAnnotations, Verdict};
use selective_ae::synth::{write_dataset, SynthConfig};
use selective_ae_cli::serve::{router, ReviewState, EXPORT_FILE};

fn dataset(dir: &Path) {
    let config = SynthConfig {
        seed: 5,
        frame_rows: 64,
        frame_cols: 80,
        eggs_per_frame: (1, 2),
        distractors_per_frame: (2, 4),
        ..Default::default()
    };
    write_dataset(dir, &config, 0, 3, 0).unwrap();
}

fn app(dir: &Path) -> Router {
    router(Arc::new(ReviewState::open(dir, None).unwrap()), None)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Option<String>, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let etag = resp.headers().get(header::ETAG).map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, etag, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn put(uri: &str, if_match: Option<&str>, body: &str) -> Request<Body> {
    let mut b = Request::put(uri).header(header::CONTENT_TYPE, "application/json");
    if let Some(tag) = if_match {
        b = b.header(header::IF_MATCH, tag);
    }
    b.body(Body::from(body.to_string())).unwrap()
}

fn reviewed(frame_id: &str) -> FrameAnnotations {
    let mut keep = BoundingBox::new(10.0, 12.0, 9.0, 7.0);
    keep.verdict = Verdict::Accepted;
    let mut drop = BoundingBox::new(30.0, 5.0, 8.0, 8.0);
    drop.verdict = Verdict::Rejected;
    drop.source = BoxSource::Model;
    FrameAnnotations::new(frame_id, vec![keep, drop, BoundingBox::new(50.0, 40.0, 6.0, 6.0)])
}

#[tokio::test]
async fn lists_frames() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let (status, _, body) = send(&app(dir.path()), get("/frames")).await;
    assert_eq!(status, StatusCode::OK);
    let list: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|f| f["frame_id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec!["f00000", "f00001", "f00002"]);
    assert!(list[0]["version"].as_str().unwrap().starts_with('"'));
}

#[tokio::test]
async fn image_is_png_of_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let app = app(dir.path());
    let (status, _, body) = send(&app, get("/frames/f00001/image")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[1..4], b"PNG");
    let decoded = image::load_from_memory(&body).unwrap().to_luma8();
    assert_eq!((decoded.width(), decoded.height()), (80, 64));
    assert_eq!(send(&app, get("/frames/nope/image")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn put_then_get_round_trips_byte_equal() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let app = app(dir.path());
    let (_, tag, _) = send(&app, get("/frames/f00000/annotations")).await;
    let body = serde_json::to_string_pretty(&reviewed("f00000")).unwrap();
    let (status, new_tag, put_body) = send(&app, put("/frames/f00000/annotations", tag.as_deref(), &body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_ne!(new_tag, tag);
    let (status, got_tag, got) = send(&app, get("/frames/f00000/annotations")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got, put_body);
    assert_eq!(got_tag, new_tag);
    assert_eq!(String::from_utf8(got).unwrap(), reviewed("f00000").to_canonical_json().unwrap());

    // Persisted to the dataset and visible after a restart.
    let reopened = self::app(dir.path());
    let (_, _, again) = send(&reopened, get("/frames/f00000/annotations")).await;
    assert_eq!(String::from_utf8(again).unwrap(), reviewed("f00000").to_canonical_json().unwrap());
    let on_disk = AnnotationSet::load(&dir.path().join("annotations.json")).unwrap();
    assert_eq!(on_disk.get("f00000").unwrap(), &reviewed("f00000"));
}

#[tokio::test]
async fn stale_or_missing_version_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let app = app(dir.path());
    let (_, tag, before) = send(&app, get("/frames/f00001/annotations")).await;
    let body = reviewed("f00001").to_canonical_json().unwrap();
    let (status, _, _) = send(&app, put("/frames/f00001/annotations", Some("\"0000\""), &body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _, _) = send(&app, put("/frames/f00001/annotations", None, &body)).await;
    assert_eq!(status, StatusCode::PRECONDITION_REQUIRED);

    // A second writer holding the old token loses.
    assert_eq!(send(&app, put("/frames/f00001/annotations", tag.as_deref(), &body)).await.0, StatusCode::OK);
    let other = FrameAnnotations::new("f00001", vec![]).to_canonical_json().unwrap();
    assert_eq!(
        send(&app, put("/frames/f00001/annotations", tag.as_deref(), &other)).await.0,
        StatusCode::CONFLICT
    );
    assert_ne!(send(&app, get("/frames/f00001/annotations")).await.2, before);
}

#[tokio::test]
async fn schema_violations_are_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let app = app(dir.path());
    let (_, tag, original) = send(&app, get("/frames/f00002/annotations")).await;
    let cases = [
        "not json".to_string(),
        r#"{"frame_id": "f00002"}"#.to_string(),
        r#"{"frame_id": "f00002", "boxes": [{"x": 1, "y": 1, "w": 0, "h": 3}]}"#.to_string(),
        r#"{"frame_id": "f00002", "boxes": [{"x": 1, "y": 1, "w": 2, "h": 3, "verdict": "maybe"}]}"#.to_string(),
        r#"{"frame_id": "f00002", "boxes": [], "extra": 1}"#.to_string(),
        FrameAnnotations::new("f00001", vec![]).to_canonical_json().unwrap(),
    ];
    for body in &cases {
        let (status, _, _) = send(&app, put("/frames/f00002/annotations", tag.as_deref(), body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(send(&app, get("/frames/f00002/annotations")).await.2, original);
    let body = FrameAnnotations::new("zzz", vec![]).to_canonical_json().unwrap();
    assert_eq!(send(&app, put("/frames/zzz/annotations", Some("*"), &body)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn export_keeps_only_accepted_boxes() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let app = app(dir.path());
    let (_, tag, _) = send(&app, get("/frames/f00000/annotations")).await;
    let body = reviewed("f00000").to_canonical_json().unwrap();
    assert_eq!(send(&app, put("/frames/f00000/annotations", tag.as_deref(), &body)).await.0, StatusCode::OK);

    let (status, _, summary) = send(&app, Request::post("/export").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let summary: serde_json::Value = serde_json::from_slice(&summary).unwrap();
    assert_eq!(summary["boxes"], 1);
    assert_eq!(summary["frames"], 3);

    let exported = AnnotationSet::load(&dir.path().join(EXPORT_FILE)).unwrap();
    let f0 = exported.get("f00000").unwrap();
    assert_eq!(f0.boxes, vec![reviewed("f00000").boxes[0].clone()]);
    // Ground-truth boxes start unreviewed, so they are not exported either.
    assert!(exported.get("f00001").unwrap().boxes.is_empty());
    assert!(exported.0.iter().flat_map(|f| &f.boxes).all(|b| b.verdict == Verdict::Accepted));
}

#[tokio::test]
async fn detections_are_merged_as_unreviewed_model_boxes() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let det_path = dir.path().join("det.json");
    let mut det = BoundingBox::detection(3.0, 4.0, 5.0, 6.0, 0.9);
    det.verdict = Verdict::Accepted;
    AnnotationSet(vec![FrameAnnotations::new("f00002", vec![det])]).save(&det_path).unwrap();
    let truth = AnnotationSet::load(&dir.path().join("annotations.json")).unwrap();
    let app = router(Arc::new(ReviewState::open(dir.path(), Some(&det_path)).unwrap()), None);
    let (_, _, body) = send(&app, get("/frames/f00002/annotations")).await;
    let got: FrameAnnotations = serde_json::from_slice(&body).unwrap();
    assert_eq!(got.boxes.len(), truth.boxes_for("f00002").len() + 1);
    let last = got.boxes.last().unwrap();
    assert_eq!((last.source, last.verdict, last.score), (BoxSource::Model, Verdict::Unreviewed, Some(0.9)));
}

#[tokio::test]
async fn static_bundle_is_served_next_to_the_api() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>review</html>").unwrap();
    let app = router(
        Arc::new(ReviewState::open(dir.path(), None).unwrap()),
        Some(ui.path().to_path_buf()),
    );
    let (status, _, body) = send(&app, get("/index.html")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>review</html>");
    assert_eq!(send(&app, get("/frames")).await.0, StatusCode::OK);
}
