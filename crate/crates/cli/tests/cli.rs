use std::path::Path;
use std::process::{Command, Output};

use selective_ae::annotations::AnnotationSet;
use selective_ae::frame::Frame;

const SMALL: [&str; 8] = [
    "--set",
    "synth.frame_rows=96",
    "--set",
    "synth.frame_cols=128",
    "--set",
    "synth.distractors_per_frame=[4,8]",
    "--set",
    "synth.seed=11",
];

fn selae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selae")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = selae(args);
    assert!(
        out.status.success(),
        "selae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn train_tiny(root: &Path) -> std::path::PathBuf {
    let out = root.join("model");
    let mut args = vec!["train", "--out", p(&out), "--pairs", "40", "--epochs", "1", "--quiet"];
    args.extend(SMALL);
    args.extend(["--set", "train.batch_size=16", "--set", "synth.seed=11"]);
    ok(&args);
    out.join("model.ckpt")
}

#[test]
fn synth_writes_dataset_with_provenance() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("ds");
    let mut args = vec!["synth", "--out", p(&out), "--frames", "3", "--boundary-every", "2"];
    args.extend(SMALL);
    let summary = ok(&args);
    assert_eq!(summary["frames"], 3);
    for f in ["f00000", "f00001", "f00002"] {
        assert!(out.join(format!("frames/{f}.pgm")).exists());
    }
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["command"], "synth");
    assert_eq!(run["config"]["synth"]["frame_rows"], 96);
    assert!(run["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["frames"][0]["boundary_case"], true);
    assert_eq!(manifest["frames"][1]["boundary_case"], false);
}

#[test]
fn failures_print_error_json_and_leave_nothing() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("ds");
    // 600 distractors cannot be placed on a 64x64 frame.
    let out_status = selae(&[
        "synth",
        "--out",
        p(&out),
        "--set",
        "synth.frame_rows=64",
        "--set",
        "synth.frame_cols=64",
        "--set",
        "synth.distractors_per_frame=[600,600]",
    ]);
    assert!(!out_status.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out_status.stderr).unwrap();
    assert_eq!(err["error"]["command"], "synth");
    assert!(err["error"]["message"].as_str().unwrap().contains("placement"));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);

    let bad_key = selae(&["synth", "--out", p(&out), "--set", "synth.colour=1"]);
    assert!(!bad_key.status.success());
    assert!(serde_json::from_slice::<serde_json::Value>(&bad_key.stderr).is_ok());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"synth": {"frame_rows": 64, "frame_cols": 64, "distractors_per_frame": [1, 2], "seed": 2},
            "dataset": {"frames": 2}}"#,
    )
    .unwrap();
    let out = root.path().join("ds");
    ok(&["synth", "--config", p(&cfg), "--out", p(&out), "--frames", "1"]);
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["config"]["dataset"]["frames"], 1);
    assert_eq!(run["config"]["synth"]["seed"], 2);
    assert_eq!(run["config"]["synth"]["frame_rows"], 64);
    assert_eq!(run["config"]["train"]["learning_rate"], 0.0001);
}

#[test]
fn train_detect_eval_chain() {
    let root = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(root.path());
    let model_dir = ckpt.parent().unwrap();
    assert!(model_dir.join("model.ckpt.json").exists());
    let csv = std::fs::read_to_string(model_dir.join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let sidecar = read_json(&model_dir.join("model.ckpt.json"));
    assert_eq!(sidecar["run"]["command"], "train");
    assert_eq!(sidecar["summary"]["param_count"], 745_281);

    let ds = root.path().join("ds");
    let mut args = vec!["synth", "--out", p(&ds), "--frames", "2", "--first-index", "100"];
    args.extend(SMALL);
    ok(&args);

    let det = root.path().join("det");
    let summary = ok(&[
        "detect", "--model", p(&ckpt), "--input", p(&ds), "--out", p(&det), "--stride", "8", "--canvas",
    ]);
    assert_eq!(summary["frames"], 2);
    assert!(det.join("overlays/f00100.png").exists());
    assert!(det.join("canvas/f00101.png").exists());
    let reports = read_json(&det.join("reports.json"));
    assert_eq!(reports["run"]["config"]["detect"]["stride"], 8);
    assert_eq!(reports["reports"].as_array().unwrap().len(), 2);
    AnnotationSet::load(&det.join("detections.json")).unwrap();

    let ev = root.path().join("ev");
    ok(&[
        "eval",
        "--pred",
        p(&det.join("detections.json")),
        "--truth",
        p(&ds.join("annotations.json")),
        "--dataset",
        p(&ds),
        "--out",
        p(&ev),
    ]);
    let result = read_json(&ev.join("eval.json"));
    assert_eq!(result["result"]["per_frame"].as_array().unwrap().len(), 2);
    assert!(ev.join("summary.txt").exists());

    let mismatch = selae(&[
        "detect", "--model", p(&ckpt), "--input", p(&ds), "--out", p(&root.path().join("x")), "--arch", "model2",
    ]);
    assert!(!mismatch.status.success());
    assert!(!root.path().join("x").exists());
}

#[test]
fn detect_on_an_all_zero_frame_finds_nothing() {
    let root = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(root.path());
    let img = root.path().join("zero.pgm");
    Frame::filled("zero", 40, 56, 0.0).save(&img).unwrap();
    let det = root.path().join("det");
    let summary = ok(&["detect", "--model", p(&ckpt), "--input", p(&img), "--out", p(&det)]);
    assert_eq!(summary["boxes"], 0);
    let set = AnnotationSet::load(&det.join("detections.json")).unwrap();
    assert_eq!(set.0.len(), 1);
    assert!(set.0[0].boxes.is_empty());
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let root = tempfile::tempdir().unwrap();
    let ds = root.path().join("ds");
    let mut args = vec!["synth", "--out", p(&ds), "--frames", "3"];
    args.extend(SMALL);
    ok(&args);
    let truth = ds.join("annotations.json");
    let summary = ok(&[
        "eval",
        "--pred",
        p(&truth),
        "--truth",
        p(&truth),
        "--dataset",
        p(&ds),
        "--out",
        p(&root.path().join("ev")),
    ]);
    assert_eq!(summary["ada"], 100.0);
    assert_eq!(summary["amer"], 0.0);
    assert_eq!(summary["and"], 100.0);
}

#[test]
fn bench_reports_closed_form_counts() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("bench");
    let report = ok(&[
        "bench",
        "--out",
        p(&out),
        "--set",
        "bench.frame_rows=64",
        "--set",
        "bench.frame_cols=96",
        "--set",
        "bench.strides=[8,16]",
        "--set",
        "synth.distractors_per_frame=[1,2]",
        "--set",
        "synth.eggs_per_frame=[1,1]",
    ]);
    let rows = report["rows"].as_array().unwrap();
    // 64x96 padded by 8 on each side: 80x112.
    assert_eq!(rows[0]["patches"], 9 * 13);
    assert_eq!(rows[1]["patches"], 5 * 7);
    for r in rows {
        assert_eq!(r["patches"], r["expected_patches"]);
    }
    assert!(out.join("bench.json").exists());
}
