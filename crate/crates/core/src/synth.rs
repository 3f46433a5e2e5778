//! Seeded synthetic microscopy frames: elongated egg ellipses scattered
//! among circles, rods, blobs and near-circular "near-egg" ellipses that share
//! the eggs' intensity profile.
//!
//! Frame `i` of a dataset is generated from `SeededRng::child(seed, i)`, so
//! frames are independent of generation order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationSet, BoundingBox, FrameAnnotations};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::patch::{classify_window, label_window, augment_rotations, pad_frame, LabeledPatchPair, PatchClass, Provenance, DEFAULT_PAD};
use crate::rng::SeededRng;

const PLACEMENT_TRIES: usize = 400;
/// Sub-pixel samples per axis when rasterizing.
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub frame_rows: usize,
    pub frame_cols: usize,
    /// Inclusive range.
    pub eggs_per_frame: (usize, usize),
    /// Inclusive range.
    pub distractors_per_frame: (usize, usize),
    pub egg_semi_major: (f64, f64),
    /// Minor/major axis ratio of eggs.
    pub egg_axis_ratio: (f64, f64),
    /// Share of distractors drawn from each kind, in the order near-egg,
    /// circle, rod, blob.
    pub distractor_mix: [f64; 4],
    pub background: f64,
    /// Object brightness above background.
    pub contrast: (f64, f64),
    /// Standard deviation of additive pixel noise, in gray levels.
    pub noise_level: f64,
    pub illumination_gradient: bool,
    /// Minimum gap between object footprints.
    pub margin: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frame_rows: 480,
            frame_cols: 640,
            eggs_per_frame: (1, 4),
            distractors_per_frame: (60, 150),
            egg_semi_major: (5.0, 7.0),
            egg_axis_ratio: (0.45, 0.6),
            distractor_mix: [0.25, 0.35, 0.2, 0.2],
            background: 50.0,
            contrast: (90.0, 130.0),
            noise_level: 6.0,
            illumination_gradient: true,
            margin: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.frame_rows < 32 || self.frame_cols < 32 {
            return bad("synthetic frames must be at least 32x32");
        }
        if self.eggs_per_frame.0 > self.eggs_per_frame.1 || self.distractors_per_frame.0 > self.distractors_per_frame.1 {
            return bad("count ranges must have min <= max");
        }
        let (lo, hi) = self.egg_semi_major;
        let (rlo, rhi) = self.egg_axis_ratio;
        if !(lo > 1.0 && lo <= hi && rlo > 0.0 && rlo <= rhi && rhi < 1.0) {
            return bad("egg axes must satisfy 1 < major_lo <= major_hi and 0 < ratio_lo <= ratio_hi < 1");
        }
        if self.distractor_mix.iter().any(|w| *w < 0.0) || self.distractor_mix.iter().sum::<f64>() <= 0.0 {
            return bad("distractor_mix weights must be non-negative with a positive sum");
        }
        if self.noise_level < 0.0 || self.margin < 0.0 {
            return bad("noise_level and margin must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Egg,
    NearEgg,
    Circle,
    Rod,
    Blob,
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Ellipse { cy: f64, cx: f64, a: f64, b: f64, theta: f64 },
    Rod { cy: f64, cx: f64, half_len: f64, radius: f64, theta: f64 },
    Blob { lobes: Vec<(f64, f64, f64)> },
}

impl Shape {
    /// Normalized squared distance from the object's core; `<= 1` inside.
    fn depth(&self, y: f64, x: f64) -> f64 {
        match self {
            Shape::Ellipse { cy, cx, a, b, theta } => {
                let (s, c) = theta.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2)
            }
            Shape::Rod { cy, cx, half_len, radius, theta } => {
                let (s, c) = theta.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = (dx * c + dy * s).clamp(-half_len, *half_len);
                let (py, px) = (cy + u * s, cx + u * c);
                ((y - py).powi(2) + (x - px).powi(2)) / radius.powi(2)
            }
            Shape::Blob { lobes } => lobes
                .iter()
                .map(|(ly, lx, r)| ((y - ly).powi(2) + (x - lx).powi(2)) / r.powi(2))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Axis-aligned extent as `(y0, x0, y1, x1)`.
    fn extent(&self) -> (f64, f64, f64, f64) {
        match self {
            Shape::Ellipse { cy, cx, a, b, theta } => {
                let (s, c) = theta.sin_cos();
                let hx = ((a * c).powi(2) + (b * s).powi(2)).sqrt();
                let hy = ((a * s).powi(2) + (b * c).powi(2)).sqrt();
                (cy - hy, cx - hx, cy + hy, cx + hx)
            }
            Shape::Rod { cy, cx, half_len, radius, theta } => {
                let (s, c) = theta.sin_cos();
                let hx = (half_len * c).abs() + radius;
                let hy = (half_len * s).abs() + radius;
                (cy - hy, cx - hx, cy + hy, cx + hx)
            }
            Shape::Blob { lobes } => lobes.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |(y0, x0, y1, x1), (ly, lx, r)| (y0.min(ly - r), x0.min(lx - r), y1.max(ly + r), x1.max(lx + r)),
            ),
        }
    }

    fn bbox(&self) -> BoundingBox {
        let (y0, x0, y1, x1) = self.extent();
        BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    fn translate(&mut self, dy: f64, dx: f64) {
        match self {
            Shape::Ellipse { cy, cx, .. } | Shape::Rod { cy, cx, .. } => {
                *cy += dy;
                *cx += dx;
            }
            Shape::Blob { lobes } => lobes.iter_mut().for_each(|(ly, lx, _)| {
                *ly += dy;
                *lx += dx;
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Object {
    kind: ObjectKind,
    shape: Shape,
    contrast: f64,
}

/// One generated frame with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    /// 8-bit intensities stored as `f64`.
    pub frame: Frame,
    /// Egg boxes, clipped to the frame.
    pub eggs: Vec<BoundingBox>,
    /// Boxes of near-egg distractors.
    pub confusable: Vec<BoundingBox>,
    /// Boxes of every distractor, near-egg ones included.
    pub distractors: Vec<BoundingBox>,
    /// 1 where a pixel centre lies inside an egg, else 0.
    pub egg_mask: Frame,
    pub distractor_count: usize,
    pub kind_counts: BTreeMap<ObjectKind, usize>,
}

impl SynthFrame {
    pub fn annotations(&self) -> FrameAnnotations {
        FrameAnnotations::new(self.frame.id.clone(), self.eggs.clone())
    }
}

pub fn frame_id(index: usize) -> String {
    format!("f{index:05}")
}

/// Generates frame `index`. With `boundary_case`, the first egg touches a
/// randomly chosen frame border with its centre 2 to 3.5 pixels inside.
pub fn generate_frame(config: &SynthConfig, index: usize, boundary_case: bool) -> Result<SynthFrame> {
    config.validate()?;
    let mut rng = SeededRng::child(config.seed, index as u64);
    let (rows, cols) = (config.frame_rows as f64, config.frame_cols as f64);
    let n_eggs = rng.int_inclusive(config.eggs_per_frame.0, config.eggs_per_frame.1);
    let n_eggs = if boundary_case { n_eggs.max(1) } else { n_eggs };
    let n_distractors = rng.int_inclusive(config.distractors_per_frame.0, config.distractors_per_frame.1);

    let mut objects: Vec<Object> = Vec::with_capacity(n_eggs + n_distractors);
    // Footprints as (cy, cx, radius).
    let mut footprints: Vec<(f64, f64, f64)> = Vec::new();

    for k in 0..n_eggs {
        let a = rng.range(config.egg_semi_major.0, config.egg_semi_major.1);
        let b = a * rng.range(config.egg_axis_ratio.0, config.egg_axis_ratio.1);
        let contrast = rng.range(config.contrast.0, config.contrast.1);
        if boundary_case && k == 0 {
            let side = rng.int_inclusive(0, 3);
            let b = rng.range(3.0, 3.5);
            let depth = b + rng.range(-1.0, 0.0);
            let along = rng.range(0.2, 0.8);
            let jitter = rng.range(-0.15, 0.15);
            // Minor axis perpendicular to the chosen border.
            let (cy, cx, theta) = match side {
                0 => (depth, along * cols, jitter),
                1 => (rows - depth, along * cols, jitter),
                2 => (along * rows, depth, std::f64::consts::FRAC_PI_2 + jitter),
                _ => (along * rows, cols - depth, std::f64::consts::FRAC_PI_2 + jitter),
            };
            let a = b / rng.range(config.egg_axis_ratio.0, config.egg_axis_ratio.1);
            let shape = Shape::Ellipse { cy, cx, a, b, theta };
            footprints.push((cy, cx, half_diagonal(&shape) + config.margin));
            objects.push(Object { kind: ObjectKind::Egg, shape, contrast });
            continue;
        }
        let theta = rng.range(0.0, std::f64::consts::PI);
        let shape = Shape::Ellipse { cy: 0.0, cx: 0.0, a, b, theta };
        place(&mut rng, shape, ObjectKind::Egg, contrast, config, &mut footprints, &mut objects, index)?;
    }

    let weights = config.distractor_mix;
    let total_w: f64 = weights.iter().sum();
    for _ in 0..n_distractors {
        let mut pick = rng.uniform() * total_w;
        let mut kind_idx = 0;
        while kind_idx < 3 && pick >= weights[kind_idx] {
            pick -= weights[kind_idx];
            kind_idx += 1;
        }
        let contrast = rng.range(config.contrast.0, config.contrast.1);
        let theta = rng.range(0.0, std::f64::consts::PI);
        let (kind, shape) = match kind_idx {
            0 => {
                let a = rng.range(config.egg_semi_major.0 - 0.5, config.egg_semi_major.1 + 0.5);
                let b = a * rng.range(0.85, 1.0);
                (ObjectKind::NearEgg, Shape::Ellipse { cy: 0.0, cx: 0.0, a, b, theta })
            }
            1 => {
                let r = rng.range(2.0, 9.0);
                (ObjectKind::Circle, Shape::Ellipse { cy: 0.0, cx: 0.0, a: r, b: r, theta: 0.0 })
            }
            2 => {
                let half_len = rng.range(7.0, 14.0);
                let radius = rng.range(0.75, 1.25);
                (ObjectKind::Rod, Shape::Rod { cy: 0.0, cx: 0.0, half_len, radius, theta })
            }
            _ => {
                let n = rng.int_inclusive(2, 4);
                let lobes = (0..n)
                    .map(|_| {
                        let r = rng.range(2.0, 4.5);
                        let (dy, dx) = (rng.range(-3.5, 3.5), rng.range(-3.5, 3.5));
                        (dy, dx, r)
                    })
                    .collect();
                (ObjectKind::Blob, Shape::Blob { lobes })
            }
        };
        place(&mut rng, shape, kind, contrast, config, &mut footprints, &mut objects, index)?;
    }

    let pixels = render(&objects, config, &mut rng);
    let id = frame_id(index);
    let frame = Frame::new(id.clone(), config.frame_rows, config.frame_cols, pixels)?;
    let mut egg_mask = Frame::filled(id, config.frame_rows, config.frame_cols, 0.0);
    let mut eggs = Vec::new();
    let mut confusable = Vec::new();
    let mut distractors = Vec::new();
    let mut kind_counts = BTreeMap::new();
    for obj in &objects {
        *kind_counts.entry(obj.kind).or_insert(0) += 1;
        let bbox = obj.shape.bbox();
        match obj.kind {
            ObjectKind::Egg => {
                rasterize_mask(&obj.shape, &mut egg_mask);
                if let Some(clipped) = bbox.translated_clipped(0.0, 0.0, rows, cols) {
                    eggs.push(clipped);
                }
            }
            ObjectKind::NearEgg => {
                confusable.push(bbox.clone());
                distractors.push(bbox);
            }
            _ => distractors.push(bbox),
        }
    }
    Ok(SynthFrame {
        frame,
        eggs,
        confusable,
        distractors,
        egg_mask,
        distractor_count: n_distractors,
        kind_counts,
    })
}

fn half_diagonal(shape: &Shape) -> f64 {
    let (y0, x0, y1, x1) = shape.extent();
    0.5 * ((y1 - y0).powi(2) + (x1 - x0).powi(2)).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn place(
    rng: &mut SeededRng,
    mut shape: Shape,
    kind: ObjectKind,
    contrast: f64,
    config: &SynthConfig,
    footprints: &mut Vec<(f64, f64, f64)>,
    objects: &mut Vec<Object>,
    index: usize,
) -> Result<()> {
    let (y0, x0, y1, x1) = shape.extent();
    let (oy, ox) = ((y0 + y1) / 2.0, (x0 + x1) / 2.0);
    shape.translate(-oy, -ox);
    let (hy, hx) = ((y1 - y0) / 2.0, (x1 - x0) / 2.0);
    let radius = (hy * hy + hx * hx).sqrt() + config.margin;
    let (rows, cols) = (config.frame_rows as f64, config.frame_cols as f64);
    if 2.0 * hy + 2.0 >= rows || 2.0 * hx + 2.0 >= cols {
        return Err(Error::Placement(format!("frame {index}: {kind:?} larger than the frame")));
    }
    for _ in 0..PLACEMENT_TRIES {
        let cy = rng.range(hy + 1.0, rows - hy - 1.0);
        let cx = rng.range(hx + 1.0, cols - hx - 1.0);
        let free = footprints
            .iter()
            .all(|&(fy, fx, fr)| (fy - cy).powi(2) + (fx - cx).powi(2) >= (fr + radius).powi(2));
        if free {
            shape.translate(cy, cx);
            footprints.push((cy, cx, radius));
            objects.push(Object { kind, shape, contrast });
            return Ok(());
        }
    }
    Err(Error::Placement(format!(
        "frame {index}: no free spot for a {kind:?} of radius {radius:.1} after {PLACEMENT_TRIES} tries ({} objects placed)",
        objects.len()
    )))
}

/// Brightness profile: 1 at the core, 0.75 at the rim.
fn profile(depth: f64) -> f64 {
    1.0 - 0.25 * depth
}

fn render(objects: &[Object], config: &SynthConfig, rng: &mut SeededRng) -> Vec<f64> {
    let (rows, cols) = (config.frame_rows, config.frame_cols);
    let mut signal = vec![0.0; rows * cols];
    let step = 1.0 / SUPERSAMPLE as f64;
    for obj in objects {
        let (y0, x0, y1, x1) = obj.shape.extent();
        let r0 = y0.floor().max(0.0) as usize;
        let c0 = x0.floor().max(0.0) as usize;
        let r1 = (y1.ceil() as usize).min(rows);
        let c1 = (x1.ceil() as usize).min(cols);
        for r in r0..r1 {
            for c in c0..c1 {
                let mut acc = 0.0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let y = r as f64 + (sy as f64 + 0.5) * step;
                        let x = c as f64 + (sx as f64 + 0.5) * step;
                        let d = obj.shape.depth(y, x);
                        if d <= 1.0 {
                            acc += profile(d);
                        }
                    }
                }
                signal[r * cols + c] += obj.contrast * acc / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            }
        }
    }
    let (gain_y, gain_x) = if config.illumination_gradient {
        let angle = rng.range(0.0, std::f64::consts::TAU);
        let strength = rng.range(0.1, 0.2);
        (strength * angle.sin(), strength * angle.cos())
    } else {
        (0.0, 0.0)
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ny = r as f64 / (rows - 1) as f64 - 0.5;
        for c in 0..cols {
            let nx = c as f64 / (cols - 1) as f64 - 0.5;
            let gain = 1.0 + 2.0 * (gain_y * ny + gain_x * nx);
            let v = (config.background + signal[r * cols + c]) * gain + config.noise_level * rng.normal();
            out.push(v.round().clamp(0.0, 255.0));
        }
    }
    out
}

fn rasterize_mask(shape: &Shape, mask: &mut Frame) {
    let (y0, x0, y1, x1) = shape.extent();
    let r0 = y0.floor().max(0.0) as usize;
    let c0 = x0.floor().max(0.0) as usize;
    let r1 = (y1.ceil() as usize).min(mask.rows);
    let c1 = (x1.ceil() as usize).min(mask.cols);
    for r in r0..r1 {
        for c in c0..c1 {
            if shape.depth(r as f64 + 0.5, c as f64 + 0.5) <= 1.0 {
                mask.set(r, c, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchDatasetConfig {
    pub count: usize,
    pub positive_fraction: f64,
    pub blocked_fraction: f64,
    /// Rotated copies per positive, including the original.
    pub k_rotations: usize,
    /// Share of background windows drawn with a distractor in the central
    /// half-window; the rest are drawn uniformly.
    pub centred_background_fraction: f64,
    pub patch: usize,
    pub pad: usize,
}

impl Default for PatchDatasetConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            positive_fraction: 0.35,
            blocked_fraction: 0.20,
            k_rotations: 10,
            centred_background_fraction: 0.0,
            patch: 16,
            pad: DEFAULT_PAD,
        }
    }
}

/// One row of the training-set breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub set: Provenance,
    pub base: usize,
    pub rotations: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub rows: Vec<ManifestRow>,
    pub total: usize,
    pub frames_used: usize,
    pub synth: SynthConfig,
    pub dataset: PatchDatasetConfig,
}

/// Normalization applied to synthetic 8-bit frames before patching.
pub fn to_unit(frame: &Frame) -> Frame {
    Frame {
        pixels: frame.pixels.iter().map(|v| v / 255.0).collect(),
        ..frame.clone()
    }
}

/// Samples labeled patches from freshly generated frames (indices counting
/// up from 0) until the requested mix is reached. Windows are cut from
/// frames padded by `pad`, with intensities scaled by 1/255.
pub fn generate_patch_dataset(config: &SynthConfig, data: &PatchDatasetConfig) -> Result<(Vec<LabeledPatchPair>, PatchManifest)> {
    config.validate()?;
    if data.count == 0 || data.k_rotations == 0 || data.patch < 4 {
        return Err(Error::InvalidArgument("count and k_rotations must be >= 1, patch >= 4".into()));
    }
    let fractions_ok = (0.0..=1.0).contains(&data.positive_fraction)
        && (0.0..=1.0).contains(&data.blocked_fraction)
        && data.positive_fraction + data.blocked_fraction <= 1.0
        && (0.0..=1.0).contains(&data.centred_background_fraction);
    if !fractions_ok {
        return Err(Error::InvalidArgument(
            "fractions must lie in [0, 1], with positive + blocked <= 1".into(),
        ));
    }
    let k = data.k_rotations;
    let positives_total = ((data.count as f64 * data.positive_fraction).round() as usize).min(data.count);
    let positive_base = positives_total.div_ceil(k);
    let blocked_target = ((data.count as f64 * data.blocked_fraction).round() as usize).min(data.count - positives_total);
    let background_target = data.count - positives_total - blocked_target;

    let m = data.patch;
    let mut positives = Vec::new();
    let mut blocked = Vec::new();
    let mut background = Vec::new();
    let mut frames_used = 0;
    // Per-frame caps spread samples over many frames.
    let per_frame_cap = 8;
    let max_frames = 100_000;
    while positives.len() < positive_base || blocked.len() < blocked_target || background.len() < background_target {
        if frames_used >= max_frames {
            return Err(Error::Placement(format!(
                "patch sampling did not converge after {max_frames} frames"
            )));
        }
        let sf = generate_frame(config, frames_used, false)?;
        let mut rng = SeededRng::child(config.seed ^ 0x5A5A_5A5A_5A5A_5A5A, frames_used as u64);
        frames_used += 1;
        let frame = pad_frame(&to_unit(&sf.frame), data.pad);
        let mask = pad_frame(&sf.egg_mask, data.pad);
        let shift = |b: &BoundingBox| BoundingBox {
            x: b.x + data.pad as f64,
            y: b.y + data.pad as f64,
            ..b.clone()
        };
        let eggs: Vec<BoundingBox> = sf.eggs.iter().map(shift).collect();
        let confusable: Vec<BoundingBox> = sf.confusable.iter().map(shift).collect();
        let distractors: Vec<BoundingBox> = sf.distractors.iter().map(shift).collect();
        let max_top = frame.rows - m;
        let max_left = frame.cols - m;
        let cut = |top: usize, left: usize| label_window(&frame, top, left, m, m, &eggs, &confusable, Some(&mask));

        for egg in &eggs {
            if positives.len() >= positive_base {
                break;
            }
            let (cy, cx) = egg.center();
            let lo_r = (egg.bottom() - m as f64).ceil().max(cy - 0.75 * m as f64).max(0.0);
            let hi_r = egg.y.floor().min(cy - 0.25 * m as f64).min(max_top as f64);
            let lo_c = (egg.right() - m as f64).ceil().max(cx - 0.75 * m as f64).max(0.0);
            let hi_c = egg.x.floor().min(cx - 0.25 * m as f64).min(max_left as f64);
            if lo_r > hi_r || lo_c > hi_c {
                continue;
            }
            let top = rng.int_inclusive(lo_r.ceil() as usize, hi_r.floor() as usize);
            let left = rng.int_inclusive(lo_c.ceil() as usize, hi_c.floor() as usize);
            let pair = cut(top, left);
            if pair.provenance == Provenance::CenteredEgg {
                positives.push(pair);
            }
        }

        let anchors: Vec<&BoundingBox> = eggs.iter().chain(&confusable).collect();
        let mut taken = 0;
        for _ in 0..4 * per_frame_cap {
            if blocked.len() >= blocked_target || taken >= per_frame_cap || anchors.is_empty() {
                break;
            }
            let b = anchors[rng.int_inclusive(0, anchors.len() - 1)];
            let top = pick_offset(&mut rng, b.y - m as f64 + 1.0, b.bottom() - 1.0, max_top);
            let left = pick_offset(&mut rng, b.x - m as f64 + 1.0, b.right() - 1.0, max_left);
            let class = classify_window(top as f64, left as f64, m as f64, m as f64, &eggs, &confusable);
            if class == PatchClass::Blocked {
                blocked.push(cut(top, left));
                taken += 1;
            }
        }

        let mut taken = 0;
        for _ in 0..4 * per_frame_cap {
            if background.len() >= background_target || taken >= per_frame_cap {
                break;
            }
            let (top, left) = if !distractors.is_empty() && rng.uniform() < data.centred_background_fraction {
                let (cy, cx) = distractors[rng.int_inclusive(0, distractors.len() - 1)].center();
                let half = m as f64 / 2.0;
                (
                    pick_offset(&mut rng, cy - 1.5 * half, cy - 0.5 * half, max_top),
                    pick_offset(&mut rng, cx - 1.5 * half, cx - 0.5 * half, max_left),
                )
            } else {
                (rng.int_inclusive(0, max_top), rng.int_inclusive(0, max_left))
            };
            let class = classify_window(top as f64, left as f64, m as f64, m as f64, &eggs, &confusable);
            if class == PatchClass::Background {
                background.push(cut(top, left));
                taken += 1;
            }
        }
    }

    let positives = augment_rotations(positives, k)?;
    let positives: Vec<LabeledPatchPair> = positives.into_iter().take(positives_total).collect();
    let rows = vec![
        ManifestRow {
            set: Provenance::CenteredEgg,
            base: positive_base,
            rotations: k,
            total: positives.len(),
        },
        ManifestRow {
            set: Provenance::Blocked,
            base: blocked.len(),
            rotations: 1,
            total: blocked.len(),
        },
        ManifestRow {
            set: Provenance::Background,
            base: background.len(),
            rotations: 1,
            total: background.len(),
        },
    ];
    let mut pairs = positives;
    pairs.extend(blocked);
    pairs.extend(background);
    let manifest = PatchManifest {
        total: pairs.len(),
        rows,
        frames_used,
        synth: config.clone(),
        dataset: data.clone(),
    };
    Ok((pairs, manifest))
}

/// Window offset in `[lo, hi]` clamped to `[0, max]`.
fn pick_offset(rng: &mut SeededRng, lo: f64, hi: f64, max: usize) -> usize {
    let lo = (lo.floor().max(0.0) as usize).min(max);
    let hi = (hi.ceil().max(0.0) as usize).clamp(lo, max);
    rng.int_inclusive(lo, hi)
}

/// Per-frame record in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub file: String,
    pub eggs: usize,
    pub distractors: usize,
    pub boundary_case: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub first_index: usize,
    pub frames: Vec<FrameRecord>,
    pub total_eggs: usize,
    pub total_distractors: usize,
    pub config: SynthConfig,
}

impl DatasetManifest {
    pub fn non_egg_counts(&self) -> BTreeMap<String, usize> {
        self.frames.iter().map(|f| (f.frame_id.clone(), f.distractors)).collect()
    }
}

/// A frame dataset on disk: `frames/*.pgm`, `annotations.json` and
/// `manifest.json`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub annotations: AnnotationSet,
}

pub const FRAMES_DIR: &str = "frames";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes frames `first_index .. first_index + count`; every frame whose
/// offset within the batch is a multiple of `boundary_every` (when nonzero)
/// is a boundary case.
pub fn write_dataset(
    root: &Path,
    config: &SynthConfig,
    first_index: usize,
    count: usize,
    boundary_every: usize,
) -> Result<Dataset> {
    let frames_dir = root.join(FRAMES_DIR);
    std::fs::create_dir_all(&frames_dir)?;
    let mut annotations = Vec::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    for offset in 0..count {
        let index = first_index + offset;
        let boundary = boundary_every > 0 && offset % boundary_every == 0;
        let sf = generate_frame(config, index, boundary)?;
        let file = format!("{}/{}.pgm", FRAMES_DIR, sf.frame.id);
        sf.frame.save(&root.join(&file))?;
        records.push(FrameRecord {
            frame_id: sf.frame.id.clone(),
            file,
            eggs: sf.eggs.len(),
            distractors: sf.distractor_count,
            boundary_case: boundary,
        });
        annotations.push(sf.annotations());
    }
    let manifest = DatasetManifest {
        seed: config.seed,
        first_index,
        total_eggs: records.iter().map(|r| r.eggs).sum(),
        total_distractors: records.iter().map(|r| r.distractors).sum(),
        frames: records,
        config: config.clone(),
    };
    let annotations = AnnotationSet(annotations);
    annotations.save(&root.join(ANNOTATIONS_FILE))?;
    std::fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
        annotations,
    })
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(root.join(MANIFEST_FILE))?)?;
        let annotations = AnnotationSet::load(&root.join(ANNOTATIONS_FILE))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            annotations,
        })
    }

    pub fn frame_path(&self, frame_id: &str) -> Option<PathBuf> {
        self.manifest
            .frames
            .iter()
            .find(|f| f.frame_id == frame_id)
            .map(|f| self.root.join(&f.file))
    }

    pub fn load_frame(&self, frame_id: &str) -> Result<Frame> {
        let path = self
            .frame_path(frame_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown frame {frame_id:?}")))?;
        let mut frame = Frame::load(&path)?;
        frame.id = frame_id.to_string();
        Ok(frame)
    }
}
