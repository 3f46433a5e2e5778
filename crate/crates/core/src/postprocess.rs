//! Difference-thresholded stitching of reconstructed patches and box
//! extraction from the stitched canvas.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationSet, BoundingBox, FrameAnnotations};
use crate::error::{Error, Result};
use crate::patch::PatchGrid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StitchMode {
    /// Mean over every patch covering a pixel.
    #[default]
    Ave,
    Max,
}

impl std::str::FromStr for StitchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ave" => Ok(Self::Ave),
            "max" => Ok(Self::Max),
            _ => Err(Error::InvalidArgument(format!("stitch mode must be ave or max, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Patches with `max - min <= val` are zeroed before stitching.
    pub val: f64,
    pub stitch_mode: StitchMode,
    /// Binarization level on the 8-bit scale.
    pub gray_threshold: f64,
    pub min_component_area: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            val: 0.1,
            stitch_mode: StitchMode::Ave,
            gray_threshold: 128.0,
            min_component_area: 25,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.val) {
            return Err(Error::InvalidArgument(format!("val must be in [0, 1], got {}", self.val)));
        }
        if !(0.0..=255.0).contains(&self.gray_threshold) {
            return Err(Error::InvalidArgument(format!(
                "gray_threshold must be in [0, 255], got {}",
                self.gray_threshold
            )));
        }
        Ok(())
    }
}

/// Streaming canvas accumulator. Patches must arrive in grid order.
#[derive(Debug, Clone)]
pub struct Stitcher {
    grid: PatchGrid,
    val: f64,
    mode: StitchMode,
    canvas: Vec<f64>,
    coverage: Vec<u32>,
    next: usize,
    suppressed: usize,
}

impl Stitcher {
    pub fn new(grid: PatchGrid, config: &PostprocessConfig) -> Self {
        let len = grid.frame_rows * grid.frame_cols;
        Self {
            grid,
            val: config.val,
            mode: config.stitch_mode,
            canvas: vec![0.0; len],
            coverage: vec![0; len],
            next: 0,
            suppressed: 0,
        }
    }

    /// Adds the next patch (`m * n` values, row-major).
    pub fn push(&mut self, patch: &[f64]) -> Result<()> {
        let g = &self.grid;
        if self.next >= g.count() {
            return Err(Error::InvalidArgument(format!("more than {} patches", g.count())));
        }
        if patch.len() != g.patch_len() {
            return Err(Error::InvalidArgument(format!(
                "patch {} has {} values, expected {}",
                self.next,
                patch.len(),
                g.patch_len()
            )));
        }
        let (lo, hi) = patch
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let suppress = hi - lo <= self.val;
        self.suppressed += suppress as usize;
        let (top, left) = g.offset(self.next);
        for r in 0..g.patch_rows {
            let row = (top + r) * g.frame_cols + left;
            for c in 0..g.patch_cols {
                let v = if suppress { 0.0 } else { patch[r * g.patch_cols + c] };
                let px = row + c;
                match self.mode {
                    StitchMode::Max => self.canvas[px] = self.canvas[px].max(v),
                    StitchMode::Ave => {
                        self.canvas[px] += v;
                        self.coverage[px] += 1;
                    }
                }
            }
        }
        self.next += 1;
        Ok(())
    }

    /// Adds a `[batch, 1, m, n]` (or `[batch, m, n]`) model output.
    pub fn push_batch(&mut self, batch: &Tensor) -> Result<()> {
        let len = self.grid.patch_len();
        if batch.len() % len != 0 {
            return Err(Error::InvalidArgument(format!(
                "batch of {} values is not a whole number of {len}-pixel patches",
                batch.len()
            )));
        }
        batch.data().chunks_exact(len).try_for_each(|p| self.push(p))
    }

    pub fn suppressed(&self) -> usize {
        self.suppressed
    }

    pub fn finish(self) -> Result<Tensor> {
        let g = self.grid;
        if self.next != g.count() {
            return Err(Error::InvalidArgument(format!(
                "stitched {} patches, grid has {}",
                self.next,
                g.count()
            )));
        }
        let mut canvas = self.canvas;
        if self.mode == StitchMode::Ave {
            for (v, &n) in canvas.iter_mut().zip(&self.coverage) {
                if n > 0 {
                    *v /= n as f64;
                }
            }
        }
        Tensor::new(&[g.frame_rows, g.frame_cols], canvas)
    }
}

/// Stitches `patches` (grid order) into an `M x N` canvas.
pub fn stitch(patches: &[Tensor], grid: &PatchGrid, config: &PostprocessConfig) -> Result<Tensor> {
    if patches.len() != grid.count() {
        return Err(Error::InvalidArgument(format!(
            "got {} patches, grid has {}",
            patches.len(),
            grid.count()
        )));
    }
    let mut s = Stitcher::new(*grid, config);
    patches.iter().try_for_each(|p| s.push(p.data()))?;
    s.finish()
}

/// Offset of the unpadded frame inside the canvas, and its size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub top: usize,
    pub left: usize,
    pub rows: usize,
    pub cols: usize,
}

impl FrameWindow {
    pub fn whole(rows: usize, cols: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            rows,
            cols,
        }
    }
}

/// Binarizes at `gray_threshold / 255`, labels 8-connected components and
/// returns one box per component of at least `min_component_area` pixels,
/// scored by its peak. Boxes are shifted into `window` coordinates and
/// clipped to it.
pub fn extract_boxes(stitched: &Tensor, config: &PostprocessConfig, window: FrameWindow) -> Result<Vec<BoundingBox>> {
    let &[rows, cols] = stitched.shape() else {
        return Err(Error::InvalidArgument(format!("canvas must be 2-D, got {:?}", stitched.shape())));
    };
    let level = config.gray_threshold / 255.0;
    let data = stitched.data();
    let mut seen = vec![false; data.len()];
    let mut queue = VecDeque::new();
    let mut boxes = Vec::new();
    for start in 0..data.len() {
        if seen[start] || data[start] < level {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut area, mut peak) = (0usize, f64::NEG_INFINITY);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / cols, i % cols);
            area += 1;
            peak = peak.max(data[i]);
            (r0, c0, r1, c1) = (r0.min(r), c0.min(c), r1.max(r), c1.max(c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if !seen[j] && data[j] >= level {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if area < config.min_component_area {
            continue;
        }
        let raw = BoundingBox::detection(c0 as f64, r0 as f64, (c1 - c0 + 1) as f64, (r1 - r0 + 1) as f64, peak);
        if let Some(b) = raw.translated_clipped(
            -(window.top as f64),
            -(window.left as f64),
            window.rows as f64,
            window.cols as f64,
        ) {
            boxes.push(b);
        }
    }
    Ok(boxes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub frame_id: String,
    #[serde(skip)]
    pub stitched: Option<Tensor>,
    pub boxes: Vec<BoundingBox>,
    pub config: PostprocessConfig,
    pub patches: usize,
    pub suppressed_patches: usize,
    pub window: FrameWindow,
}

impl DetectionReport {
    pub fn to_annotations(&self) -> FrameAnnotations {
        FrameAnnotations::new(self.frame_id.clone(), self.boxes.clone())
    }
}

pub fn reports_to_annotations(reports: &[DetectionReport]) -> AnnotationSet {
    AnnotationSet(reports.iter().map(DetectionReport::to_annotations).collect())
}
