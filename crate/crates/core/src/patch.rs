//! Frame normalization, padding, patch grids, selective labels and rotation
//! augmentation.
//!
//! Patch `(h, w)` of a grid covers rows `[h*s_h, h*s_h + m)` and columns
//! `[w*s_w, w*s_w + n)`, enumerated row-major. The number of patches per axis
//! is `U = (M - m + s_h) / s_h` and `V = (N - n + s_w) / s_w`.

use serde::{Deserialize, Serialize};

use crate::annotations::BoundingBox;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::tensor::Tensor;

/// Zero padding added on each side before patching. A 480x640 frame becomes
/// 496x656, which reproduces the published per-stride patch counts.
pub const DEFAULT_PAD: usize = 8;

/// Affine intensity map fitted jointly over a set of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap {
    pub min: f64,
    pub max: f64,
}

impl NormalizationMap {
    pub fn fit(frames: &[Frame]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("normalization"));
        }
        let (min, max) = frames
            .iter()
            .flat_map(|f| f.pixels.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if max <= min {
            return Err(Error::ConstantData(min));
        }
        Ok(Self { min, max })
    }

    /// Maps `min -> 0` and `max -> 1`; values outside the fitted range are
    /// clamped.
    pub fn apply(&self, frame: &Frame) -> Frame {
        let span = self.max - self.min;
        Frame {
            pixels: frame
                .pixels
                .iter()
                .map(|&v| ((v - self.min) / span).clamp(0.0, 1.0))
                .collect(),
            ..frame.clone()
        }
    }
}

/// Normalizes all frames with one min-max map computed over all of them.
pub fn normalize_global(frames: &[Frame]) -> Result<(Vec<Frame>, NormalizationMap)> {
    let map = NormalizationMap::fit(frames)?;
    Ok((frames.iter().map(|f| map.apply(f)).collect(), map))
}

/// Zero-pads `pad` pixels on every side.
pub fn pad_frame(frame: &Frame, pad: usize) -> Frame {
    pad_frame_asymmetric(frame, pad, pad, pad, pad)
}

pub fn pad_frame_asymmetric(frame: &Frame, top: usize, bottom: usize, left: usize, right: usize) -> Frame {
    if top + bottom + left + right == 0 {
        return frame.clone();
    }
    let rows = frame.rows + top + bottom;
    let cols = frame.cols + left + right;
    let mut out = Frame::filled(frame.id.clone(), rows, cols, 0.0);
    for r in 0..frame.rows {
        let src = &frame.pixels[r * frame.cols..(r + 1) * frame.cols];
        out.pixels[(r + top) * cols + left..(r + top) * cols + left + frame.cols].copy_from_slice(src);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub frame_rows: usize,
    pub frame_cols: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub stride_rows: usize,
    pub stride_cols: usize,
    /// Patches per column of the grid (`U`).
    pub rows: usize,
    /// Patches per row of the grid (`V`).
    pub cols: usize,
}

pub fn make_grid(
    frame_rows: usize,
    frame_cols: usize,
    patch_rows: usize,
    patch_cols: usize,
    stride_rows: usize,
    stride_cols: usize,
) -> Result<PatchGrid> {
    if stride_rows == 0 || stride_cols == 0 || patch_rows == 0 || patch_cols == 0 {
        return Err(Error::InvalidArgument("patch dimensions and strides must be >= 1".into()));
    }
    if frame_rows < patch_rows || frame_cols < patch_cols {
        return Err(Error::InvalidArgument(format!(
            "frame {frame_rows}x{frame_cols} is smaller than patch {patch_rows}x{patch_cols}"
        )));
    }
    let per_axis = |dim, extent: usize, patch: usize, stride: usize| {
        let rem = (extent - patch) % stride;
        if rem != 0 {
            return Err(Error::GridRemainder {
                dim,
                extent,
                patch,
                stride,
                needed: stride - rem,
            });
        }
        Ok((extent - patch + stride) / stride)
    };
    Ok(PatchGrid {
        frame_rows,
        frame_cols,
        patch_rows,
        patch_cols,
        stride_rows,
        stride_cols,
        rows: per_axis("rows", frame_rows, patch_rows, stride_rows)?,
        cols: per_axis("cols", frame_cols, patch_cols, stride_cols)?,
    })
}

impl PatchGrid {
    /// `P = U * V`.
    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// `(top, left)` of patch `index` in row-major grid order.
    pub fn offset(&self, index: usize) -> (usize, usize) {
        let (h, w) = (index / self.cols, index % self.cols);
        (h * self.stride_rows, w * self.stride_cols)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.rows != self.frame_rows || frame.cols != self.frame_cols {
            return Err(Error::InvalidArgument(format!(
                "grid is for {}x{} frames, got {}x{}",
                self.frame_rows, self.frame_cols, frame.rows, frame.cols
            )));
        }
        Ok(())
    }
}

/// Pads `pad` on every side, then extends the bottom/right edge with zeros
/// until the strides tile the frame exactly.
pub fn pad_to_grid(
    frame: &Frame,
    pad: usize,
    patch: (usize, usize),
    stride: (usize, usize),
) -> Result<(Frame, PatchGrid)> {
    let extra = |extent: usize, p: usize, s: usize| if s == 0 { 0 } else { (s - (extent - p) % s) % s };
    let rows = (frame.rows + 2 * pad).max(patch.0);
    let cols = (frame.cols + 2 * pad).max(patch.1);
    let bottom = rows - (frame.rows + 2 * pad) + extra(rows, patch.0, stride.0);
    let right = cols - (frame.cols + 2 * pad) + extra(cols, patch.1, stride.1);
    let padded = pad_frame_asymmetric(frame, pad, pad + bottom, pad, pad + right);
    let grid = make_grid(padded.rows, padded.cols, patch.0, patch.1, stride.0, stride.1)?;
    Ok((padded, grid))
}

/// Copies patch `index` into `out` (length `m * n`).
pub fn copy_patch(frame: &Frame, grid: &PatchGrid, index: usize, out: &mut [f64]) {
    let (top, left) = grid.offset(index);
    for r in 0..grid.patch_rows {
        let src = &frame.pixels[(top + r) * frame.cols + left..(top + r) * frame.cols + left + grid.patch_cols];
        out[r * grid.patch_cols..(r + 1) * grid.patch_cols].copy_from_slice(src);
    }
}

/// All `P` patches in row-major grid order, each `[m, n]`.
pub fn extract_patches(frame: &Frame, grid: &PatchGrid) -> Result<Vec<Tensor>> {
    grid.check_frame(frame)?;
    (0..grid.count())
        .map(|i| {
            let mut buf = vec![0.0; grid.patch_len()];
            copy_patch(frame, grid, i, &mut buf);
            Tensor::new(&[grid.patch_rows, grid.patch_cols], buf)
        })
        .collect()
}

/// Patches `range` stacked as a `[batch, 1, m, n]` model input.
pub fn extract_patch_batch(frame: &Frame, grid: &PatchGrid, range: std::ops::Range<usize>) -> Result<Tensor> {
    grid.check_frame(frame)?;
    if range.end > grid.count() || range.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "patch range {range:?} outside 0..{}",
            grid.count()
        )));
    }
    let len = grid.patch_len();
    let mut buf = vec![0.0; range.len() * len];
    for (slot, i) in range.clone().enumerate() {
        copy_patch(frame, grid, i, &mut buf[slot * len..(slot + 1) * len]);
    }
    Tensor::new(&[range.len(), 1, grid.patch_rows, grid.patch_cols], buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    CenteredEgg,
    Blocked,
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatchPair {
    pub input: Tensor,
    pub label: Tensor,
    pub provenance: Provenance,
    pub rotation_deg: f64,
}

/// Outcome of the labeling rule for one patch window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchClass {
    /// Positive; carries the index of the centred egg.
    Centered(usize),
    Blocked,
    Background,
}

/// Labeling rule for the `rows x cols` window at `(top, left)`.
///
/// Positive iff exactly one egg box lies fully inside the window and its
/// centre falls in the central `rows/2 x cols/2` region. Otherwise the window
/// is blocked if it touches any egg or fully contains a confusable
/// distractor, and background if not.
pub fn classify_window(
    top: f64,
    left: f64,
    rows: f64,
    cols: f64,
    eggs: &[BoundingBox],
    confusable: &[BoundingBox],
) -> PatchClass {
    let inside: Vec<usize> = eggs
        .iter()
        .enumerate()
        .filter(|(_, b)| b.inside(top, left, rows, cols))
        .map(|(i, _)| i)
        .collect();
    if let [only] = inside[..] {
        let (cy, cx) = eggs[only].center();
        let centered = cy >= top + rows / 4.0
            && cy < top + 3.0 * rows / 4.0
            && cx >= left + cols / 4.0
            && cx < left + 3.0 * cols / 4.0;
        if centered {
            return PatchClass::Centered(only);
        }
    }
    let touches_egg = eggs.iter().any(|b| b.overlaps(top, left, rows, cols));
    let holds_confusable = confusable.iter().any(|b| b.inside(top, left, rows, cols));
    if touches_egg || holds_confusable {
        PatchClass::Blocked
    } else {
        PatchClass::Background
    }
}

/// Label for a positive window: the egg's silhouette restricted to its box.
///
/// `mask` is a frame-aligned 0/1 silhouette map; without one, the ellipse
/// inscribed in the box is used.
pub fn silhouette_label(
    top: usize,
    left: usize,
    rows: usize,
    cols: usize,
    egg: &BoundingBox,
    mask: Option<&Frame>,
) -> Tensor {
    let (cy, cx) = egg.center();
    let (ry, rx) = (egg.h / 2.0, egg.w / 2.0);
    Tensor::from_fn(&[rows, cols], |i| {
        let (r, c) = (top + i / cols, left + i % cols);
        let (pr, pc) = (r as f64 + 0.5, c as f64 + 0.5);
        let in_box = pc >= egg.x && pc < egg.right() && pr >= egg.y && pr < egg.bottom();
        if !in_box {
            return 0.0;
        }
        match mask {
            Some(m) if r < m.rows && c < m.cols => {
                if m.get(r, c) > 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Some(_) => 0.0,
            None => {
                let d = ((pr - cy) / ry).powi(2) + ((pc - cx) / rx).powi(2);
                if d <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    })
}

/// Labels the window at `(top, left)` and cuts its input patch.
pub fn label_window(
    frame: &Frame,
    top: usize,
    left: usize,
    rows: usize,
    cols: usize,
    eggs: &[BoundingBox],
    confusable: &[BoundingBox],
    mask: Option<&Frame>,
) -> LabeledPatchPair {
    let input = Tensor::from_fn(&[rows, cols], |i| frame.get(top + i / cols, left + i % cols));
    let class = classify_window(top as f64, left as f64, rows as f64, cols as f64, eggs, confusable);
    let (label, provenance) = match class {
        PatchClass::Centered(i) => (silhouette_label(top, left, rows, cols, &eggs[i], mask), Provenance::CenteredEgg),
        PatchClass::Blocked => (Tensor::zeros(&[rows, cols]), Provenance::Blocked),
        PatchClass::Background => (Tensor::zeros(&[rows, cols]), Provenance::Background),
    };
    LabeledPatchPair {
        input,
        label,
        provenance,
        rotation_deg: 0.0,
    }
}

/// Labels every patch of `grid`. Boxes are in the frame's own coordinates.
pub fn build_labels(
    frame: &Frame,
    eggs: &[BoundingBox],
    grid: &PatchGrid,
    confusable: &[BoundingBox],
    mask: Option<&Frame>,
) -> Result<Vec<LabeledPatchPair>> {
    grid.check_frame(frame)?;
    for b in eggs.iter().chain(confusable) {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::InvalidArgument(format!("zero-area box at ({}, {})", b.x, b.y)));
        }
    }
    Ok((0..grid.count())
        .map(|i| {
            let (top, left) = grid.offset(i);
            label_window(frame, top, left, grid.patch_rows, grid.patch_cols, eggs, confusable, mask)
        })
        .collect())
}

/// Nearest-neighbour rotation about the patch centre, counter-clockwise in
/// image coordinates (same sense as [`Tensor::rotate90k`]). Samples falling
/// outside the patch take `fill`, or the nearest edge pixel when `fill` is
/// `None`.
pub fn rotate_nearest(t: &Tensor, degrees: f64, fill: Option<f64>) -> Result<Tensor> {
    let &[rows, cols] = t.shape() else {
        return Err(Error::InvalidArgument(format!("rotation needs a 2-D tensor, got {:?}", t.shape())));
    };
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    Ok(Tensor::from_fn(&[rows, cols], |idx| {
        let (di, dj) = ((idx / cols) as f64 - cr, (idx % cols) as f64 - cc);
        let si = (cr + cos * di + sin * dj).round();
        let sj = (cc - sin * di + cos * dj).round();
        let inside = si >= 0.0 && sj >= 0.0 && si < rows as f64 && sj < cols as f64;
        match (inside, fill) {
            (true, _) | (false, None) => {
                let r = si.clamp(0.0, rows as f64 - 1.0) as usize;
                let c = sj.clamp(0.0, cols as f64 - 1.0) as usize;
                t.data()[r * cols + c]
            }
            (false, Some(v)) => v,
        }
    }))
}

/// Replicates every positive pair at `k` evenly spaced angles in
/// `[0, 180)` degrees, rotating input and label together. Other pairs are
/// kept once.
pub fn augment_rotations(pairs: Vec<LabeledPatchPair>, k: usize) -> Result<Vec<LabeledPatchPair>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k_rotations must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(pairs.len() * k);
    for pair in pairs {
        if pair.provenance != Provenance::CenteredEgg || k == 1 {
            out.push(pair);
            continue;
        }
        for i in 0..k {
            let angle = 180.0 * i as f64 / k as f64;
            if i == 0 {
                out.push(pair.clone());
                continue;
            }
            out.push(LabeledPatchPair {
                input: rotate_nearest(&pair.input, angle, None)?,
                label: rotate_nearest(&pair.label, angle, Some(0.0))?,
                provenance: pair.provenance,
                rotation_deg: pair.rotation_deg + angle,
            });
        }
    }
    Ok(out)
}
