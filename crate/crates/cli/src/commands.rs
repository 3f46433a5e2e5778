//! The pipeline stages behind each subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use selective_ae::annotations::AnnotationSet;
use selective_ae::checkpoint::Checkpoint;
use selective_ae::detect::{canvas_image, detect_frame, prepare_frame, EIGHT_BIT};
use selective_ae::frame::{render_overlay, BoxStyle, Frame};
use selective_ae::metrics::{evaluate, match_boxes};
use selective_ae::model::{build_model, Arch, ModelParams, PATCH_SIDE};
use selective_ae::patch::LabeledPatchPair;
use selective_ae::postprocess::DetectionReport;
use selective_ae::synth::{generate_frame, generate_patch_dataset, write_dataset, Dataset, MANIFEST_FILE};
use selective_ae::train::{initial_model, selectivity, split_indices, train_model};

use crate::config::{RunConfig, RunInfo};
use crate::output::{Staging, RUN_FILE, TIMING_FILE};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_CSV: &str = "history.csv";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const REPORTS_FILE: &str = "reports.json";
pub const EVAL_FILE: &str = "eval.json";
pub const BENCH_FILE: &str = "bench.json";

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<Value> {
    let staging = Staging::new(out)?;
    let start = Instant::now();
    let d = &config.dataset;
    let dataset = write_dataset(staging.path(), &config.synth, d.first_index, d.frames, d.boundary_every)?;
    staging.write_json(RUN_FILE, &RunInfo::new("synth", config))?;
    staging.write_json(TIMING_FILE, &json!({ "seconds": seconds(start) }))?;
    staging.commit()?;
    Ok(json!({
        "frames": dataset.manifest.frames.len(),
        "eggs": dataset.manifest.total_eggs,
        "distractors": dataset.manifest.total_distractors,
        "out": out,
    }))
}

/// Trains on a seeded synthetic patch set and writes the checkpoint, its
/// sidecar, the loss history and the patch manifest.
pub fn cmd_train(config: &RunConfig, out: &Path, verbose: bool) -> Result<Value> {
    let staging = Staging::new(out)?;
    let start = Instant::now();
    let (pairs, manifest) = generate_patch_dataset(&config.synth, &config.patches).context("generating patches")?;
    let generated = seconds(start);
    let model = initial_model(&pairs, &config.train)?;
    let (model, history) = train_model(model, &pairs, &config.train, |r| {
        if verbose {
            eprintln!(
                "epoch {:>3}  train_mse {:.6}  val_mse {:.6}  ({:.0} s)",
                r.epoch,
                r.train_mse,
                r.val_mse,
                seconds(start)
            );
        }
    })?;
    let (_, val_idx) = split_indices(pairs.len(), config.train.validation_fraction, config.train.seed)?;
    let val: Vec<&LabeledPatchPair> = val_idx.iter().map(|&i| &pairs[i]).collect();
    let sel = selectivity(&model, &val)?;
    let summary = json!({
        "arch": model.arch,
        "param_count": model.param_count(),
        "pairs": pairs.len(),
        "initial_val_mse": history.initial_val_mse(),
        "best_val_mse": history.best_val_mse(),
        "best_epoch": history.best_epoch,
        "epochs_run": history.records.len() - 1,
        "stopped_early": history.stopped_early,
        "selectivity": sel,
        "selectivity_ratio": sel.ratio(),
    });
    let ck = Checkpoint::new(model, Some(EIGHT_BIT));
    let run = RunInfo::new("train", config);
    ck.save(
        &staging.file(CHECKPOINT_FILE),
        &json!({ "run": run, "summary": summary, "history": history }),
    )?;
    staging.write_text(HISTORY_CSV, &history.to_csv())?;
    staging.write_json("patches.json", &json!({ "run": run, "manifest": manifest }))?;
    staging.write_json(RUN_FILE, &run)?;
    staging.write_json(
        TIMING_FILE,
        &json!({ "patch_generation_seconds": generated, "total_seconds": seconds(start) }),
    )?;
    staging.commit()?;
    Ok(summary)
}

/// Frames to run detection on, with ground truth when they come from a
/// dataset directory.
pub struct Inputs {
    pub frames: Vec<PathBuf>,
    pub ids: Vec<String>,
    pub truth: Option<AnnotationSet>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "png", "pnm"];

pub fn collect_inputs(paths: &[PathBuf]) -> Result<Inputs> {
    let mut inputs = Inputs {
        frames: Vec::new(),
        ids: Vec::new(),
        truth: None,
    };
    let mut truth = AnnotationSet::default();
    for path in paths {
        if path.is_dir() && path.join(MANIFEST_FILE).exists() {
            let ds = Dataset::open(path)?;
            for rec in &ds.manifest.frames {
                inputs.frames.push(ds.root.join(&rec.file));
                inputs.ids.push(rec.frame_id.clone());
            }
            truth.0.extend(ds.annotations.0);
        } else if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| has_image_extension(p))
                .collect();
            files.sort();
            for f in files {
                inputs.ids.push(stem(&f));
                inputs.frames.push(f);
            }
        } else if path.is_file() {
            inputs.ids.push(stem(path));
            inputs.frames.push(path.clone());
        } else {
            bail!("input {} does not exist", path.display());
        }
    }
    ensure!(!inputs.frames.is_empty(), "no input frames");
    let mut seen = std::collections::BTreeSet::new();
    for id in &inputs.ids {
        ensure!(seen.insert(id), "duplicate frame id {id:?}");
    }
    if !truth.0.is_empty() {
        inputs.truth = Some(truth);
    }
    Ok(inputs)
}

pub fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_checkpoint(path: &Path, arch: Option<Arch>) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(arch) = arch {
        ensure!(
            ck.model.arch == arch,
            "checkpoint holds {:?} but {:?} was requested",
            ck.model.arch,
            arch
        );
    }
    Ok(ck)
}

#[derive(Debug, Clone)]
pub struct DetectArgs {
    pub model: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub arch: Option<Arch>,
    /// Also write the stitched activation canvases.
    pub canvas: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub run: RunInfo,
    /// SHA-256 of the checkpoint file.
    pub checkpoint_sha256: String,
    pub reports: Vec<DetectionReport>,
}

pub fn cmd_detect(config: &RunConfig, args: &DetectArgs) -> Result<Value> {
    let ck = load_checkpoint(&args.model, args.arch)?;
    let norm = ck.normalization.unwrap_or(EIGHT_BIT);
    let inputs = collect_inputs(&args.inputs)?;
    let staging = Staging::new(&args.out)?;
    let overlays = staging.file("overlays");
    std::fs::create_dir(&overlays)?;
    if args.canvas {
        std::fs::create_dir(staging.file("canvas"))?;
    }
    let start = Instant::now();
    let mut reports = Vec::with_capacity(inputs.frames.len());
    let mut per_frame = Vec::with_capacity(inputs.frames.len());
    for (path, id) in inputs.frames.iter().zip(&inputs.ids) {
        let t = Instant::now();
        let mut frame = Frame::load(path)?;
        frame.id = id.clone();
        let mut report = detect_frame(&ck.model, &norm, &frame, &config.detect)?;
        let truth = inputs.truth.as_ref().map(|t| t.boxes_for(id));
        let overlay = render_overlay(&frame, &styled_boxes(&report, truth, config.eval.iou_min));
        overlay
            .save(overlays.join(format!("{id}.png")))
            .with_context(|| format!("writing overlay for {id}"))?;
        if args.canvas {
            if let Some(c) = canvas_image(&report) {
                c.save(&staging.file(&format!("canvas/{id}.png")))?;
            }
        }
        report.stitched = None;
        per_frame.push(json!({ "frame_id": id, "seconds": seconds(t) }));
        reports.push(report);
    }
    let run = RunInfo::new("detect", config);
    let annotations = selective_ae::postprocess::reports_to_annotations(&reports);
    annotations.save(&staging.file(DETECTIONS_FILE))?;
    let boxes: usize = reports.iter().map(|r| r.boxes.len()).sum();
    let file = ReportFile {
        run: run.clone(),
        checkpoint_sha256: file_digest(&args.model)?,
        reports,
    };
    staging.write_json(REPORTS_FILE, &file)?;
    staging.write_json(RUN_FILE, &run)?;
    staging.write_json(TIMING_FILE, &json!({ "total_seconds": seconds(start), "frames": per_frame }))?;
    staging.commit()?;
    Ok(json!({ "frames": inputs.frames.len(), "boxes": boxes, "out": args.out }))
}

/// Matched detections, false alarms and misses when truth is known; plain
/// detections otherwise.
fn styled_boxes(
    report: &DetectionReport,
    truth: Option<&[selective_ae::annotations::BoundingBox]>,
    iou_min: f64,
) -> Vec<(selective_ae::annotations::BoundingBox, BoxStyle)> {
    let Some(truth) = truth else {
        return report.boxes.iter().map(|b| (b.clone(), BoxStyle::Detection)).collect();
    };
    let m = match_boxes(&report.boxes, truth, iou_min);
    let mut out: Vec<_> = m.pairs.iter().map(|&(p, _)| (report.boxes[p].clone(), BoxStyle::Matched)).collect();
    out.extend(m.unmatched_pred.iter().map(|&p| (report.boxes[p].clone(), BoxStyle::FalseAlarm)));
    out.extend(m.unmatched_truth.iter().map(|&t| (truth[t].clone(), BoxStyle::Missed)));
    out
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub predicted: PathBuf,
    pub truth: PathBuf,
    /// Dataset directory supplying per-frame non-egg counts.
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn cmd_eval(config: &RunConfig, args: &EvalArgs) -> Result<Value> {
    let predicted = AnnotationSet::load(&args.predicted)
        .with_context(|| format!("loading predictions {}", args.predicted.display()))?;
    let truth = AnnotationSet::load(&args.truth).with_context(|| format!("loading truth {}", args.truth.display()))?;
    let non_eggs: BTreeMap<String, usize> = match &args.dataset {
        Some(dir) => Dataset::open(dir)?.manifest.non_egg_counts(),
        None => BTreeMap::new(),
    };
    let result = evaluate(&predicted, &truth, &non_eggs, config.eval.iou_min)?;
    let staging = Staging::new(&args.out)?;
    let run = RunInfo::new("eval", config);
    let label = stem(&args.predicted);
    staging.write_json(EVAL_FILE, &json!({ "run": run, "result": result }))?;
    staging.write_text("eval.csv", &result.to_csv())?;
    staging.write_text("summary.txt", &result.to_table(&label))?;
    staging.write_json(RUN_FILE, &run)?;
    staging.commit()?;
    Ok(json!({
        "ada": result.ada,
        "amer": result.amer,
        "and": result.and,
        "summary": result.summary(label).to_string(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub stride: usize,
    pub padded_rows: usize,
    pub padded_cols: usize,
    pub patches: usize,
    /// `((M - m + s) / s) * ((N - n + s) / s)` on the padded frame.
    pub expected_patches: usize,
    pub seconds: f64,
    /// `seconds / (c * patches)` with `c` the least-squares rate through the
    /// origin.
    pub relative_to_fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub run: RunInfo,
    pub rows: Vec<BenchRow>,
    pub seconds_per_patch: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
}

/// Times full-frame detection at each configured stride on one synthetic
/// frame. Fails if any patch count departs from the closed form.
pub fn run_bench(config: &RunConfig, model: &ModelParams) -> Result<BenchReport> {
    let b = &config.bench;
    let synth = selective_ae::synth::SynthConfig {
        frame_rows: b.frame_rows,
        frame_cols: b.frame_cols,
        ..config.synth.clone()
    };
    let frame = generate_frame(&synth, 0, false)?.frame;
    let mut rows = Vec::with_capacity(b.strides.len());
    for &stride in &b.strides {
        let detect = selective_ae::detect::DetectConfig {
            stride,
            ..config.detect
        };
        let prepared = prepare_frame(&frame, &EIGHT_BIT, stride, detect.pad)?;
        let (pm, pn) = (prepared.padded.rows, prepared.padded.cols);
        let expected = ((pm - PATCH_SIDE + stride) / stride) * ((pn - PATCH_SIDE + stride) / stride);
        let patches = prepared.grid.count();
        ensure!(
            patches == expected,
            "stride {stride}: grid has {patches} patches, closed form gives {expected}"
        );
        let mut times = Vec::with_capacity(b.repeats);
        for _ in 0..b.repeats {
            let t = Instant::now();
            detect_frame(model, &EIGHT_BIT, &frame, &detect)?;
            times.push(seconds(t));
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            stride,
            padded_rows: pm,
            padded_cols: pn,
            patches,
            expected_patches: expected,
            seconds: times[times.len() / 2],
            relative_to_fit: 0.0,
        });
    }
    let tp: f64 = rows.iter().map(|r| r.seconds * r.patches as f64).sum();
    let pp: f64 = rows.iter().map(|r| (r.patches as f64).powi(2)).sum();
    let rate = tp / pp;
    for r in &mut rows {
        r.relative_to_fit = r.seconds / (rate * r.patches as f64);
    }
    let within = rows.iter().all(|r| (r.relative_to_fit - 1.0).abs() <= b.tolerance);
    Ok(BenchReport {
        run: RunInfo::new("bench", config),
        rows,
        seconds_per_patch: rate,
        tolerance: b.tolerance,
        within_tolerance: within,
    })
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    /// Untrained weights are used when absent; timing does not depend on
    /// their values.
    pub model: Option<PathBuf>,
    pub arch: Option<Arch>,
    pub out: PathBuf,
    /// Fail, writing nothing, when timing is outside the tolerance.
    pub strict: bool,
}

pub fn cmd_bench(config: &RunConfig, args: &BenchArgs) -> Result<BenchReport> {
    let model = match &args.model {
        Some(p) => load_checkpoint(p, args.arch)?.model,
        None => build_model(args.arch.unwrap_or(config.train.arch), config.train.seed)?,
    };
    let staging = Staging::new(&args.out)?;
    let report = run_bench(config, &model)?;
    if args.strict && !report.within_tolerance {
        bail!("detection time does not scale with patch count within {}", report.tolerance);
    }
    staging.write_json(BENCH_FILE, &report)?;
    staging.write_json(RUN_FILE, &report.run)?;
    staging.commit()?;
    Ok(report)
}
