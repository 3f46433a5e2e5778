//! Frame-level detection: normalize, pad, patch, reconstruct, stitch and
//! extract boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::{ModelParams, PATCH_SIDE};
use crate::patch::{copy_patch, pad_to_grid, NormalizationMap, PatchGrid, DEFAULT_PAD};
use crate::postprocess::{extract_boxes, DetectionReport, FrameWindow, PostprocessConfig, Stitcher};
use crate::tensor::Tensor;

/// Intensity map for 8-bit frames when a checkpoint carries none.
pub const EIGHT_BIT: NormalizationMap = NormalizationMap { min: 0.0, max: 255.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub stride: usize,
    pub pad: usize,
    pub batch_size: usize,
    pub postprocess: PostprocessConfig,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            pad: DEFAULT_PAD,
            batch_size: 256,
            postprocess: PostprocessConfig::default(),
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("stride and batch_size must be >= 1".into()));
        }
        self.postprocess.validate()
    }
}

/// A normalized, padded frame with its grid.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub padded: Frame,
    pub grid: PatchGrid,
    pub window: FrameWindow,
}

pub fn prepare_frame(frame: &Frame, norm: &NormalizationMap, stride: usize, pad: usize) -> Result<PreparedFrame> {
    let normalized = norm.apply(frame);
    let (padded, grid) = pad_to_grid(&normalized, pad, (PATCH_SIDE, PATCH_SIDE), (stride, stride))?;
    Ok(PreparedFrame {
        padded,
        grid,
        window: FrameWindow {
            top: pad,
            left: pad,
            rows: frame.rows,
            cols: frame.cols,
        },
    })
}

/// Reconstructs every patch in grid order and hands the outputs to `sink`
/// one batch at a time (`[batch, 1, m, n]`). Patches whose input is exactly
/// constant carry no structure and are emitted as zeros without inference.
pub fn reconstruct_patches(
    model: &ModelParams,
    prepared: &PreparedFrame,
    batch_size: usize,
    mut sink: impl FnMut(&Tensor) -> Result<()>,
) -> Result<()> {
    let grid = &prepared.grid;
    if model.input_shape != [1, grid.patch_rows, grid.patch_cols] {
        return Err(Error::InvalidArgument(format!(
            "model input {:?} does not match {}x{} patches",
            model.input_shape, grid.patch_rows, grid.patch_cols
        )));
    }
    let len = grid.patch_len();
    let mut patch = vec![0.0; len];
    let mut start = 0;
    while start < grid.count() {
        let end = (start + batch_size).min(grid.count());
        let mut inputs = Vec::with_capacity((end - start) * len);
        let mut live = Vec::with_capacity(end - start);
        for i in start..end {
            copy_patch(&prepared.padded, grid, i, &mut patch);
            let first = patch[0];
            if patch.iter().any(|&v| v != first) {
                inputs.extend_from_slice(&patch);
                live.push(i - start);
            }
        }
        let mut out = vec![0.0; (end - start) * len];
        if !live.is_empty() {
            let x = Tensor::new(&[live.len(), 1, grid.patch_rows, grid.patch_cols], inputs)?;
            let y = model.predict(&x)?;
            for (k, &slot) in live.iter().enumerate() {
                out[slot * len..(slot + 1) * len].copy_from_slice(&y.data()[k * len..(k + 1) * len]);
            }
        }
        sink(&Tensor::new(&[end - start, 1, grid.patch_rows, grid.patch_cols], out)?)?;
        start = end;
    }
    Ok(())
}

/// Stitched canvases for several postprocess configurations from a single
/// reconstruction pass.
pub fn stitch_many(
    model: &ModelParams,
    prepared: &PreparedFrame,
    batch_size: usize,
    configs: &[PostprocessConfig],
) -> Result<Vec<(Tensor, usize)>> {
    let mut stitchers: Vec<Stitcher> = configs.iter().map(|c| Stitcher::new(prepared.grid, c)).collect();
    reconstruct_patches(model, prepared, batch_size, |batch| {
        stitchers.iter_mut().try_for_each(|s| s.push_batch(batch))
    })?;
    stitchers
        .into_iter()
        .map(|s| {
            let suppressed = s.suppressed();
            s.finish().map(|t| (t, suppressed))
        })
        .collect()
}

pub fn detect_frame(
    model: &ModelParams,
    norm: &NormalizationMap,
    frame: &Frame,
    config: &DetectConfig,
) -> Result<DetectionReport> {
    config.validate()?;
    let prepared = prepare_frame(frame, norm, config.stride, config.pad)?;
    let (stitched, suppressed) = stitch_many(model, &prepared, config.batch_size, &[config.postprocess])?
        .pop()
        .expect("one config");
    let boxes = extract_boxes(&stitched, &config.postprocess, prepared.window)?;
    Ok(DetectionReport {
        frame_id: frame.id.clone(),
        stitched: Some(stitched),
        boxes,
        config: config.postprocess,
        patches: prepared.grid.count(),
        suppressed_patches: suppressed,
        window: prepared.window,
    })
}

/// The stitched canvas cropped to the unpadded frame, on the 8-bit scale.
pub fn canvas_image(report: &DetectionReport) -> Option<Frame> {
    let canvas = report.stitched.as_ref()?;
    let cols = canvas.shape()[1];
    let w = report.window;
    let pixels = (0..w.rows)
        .flat_map(|r| (0..w.cols).map(move |c| (r, c)))
        .map(|(r, c)| canvas.data()[(r + w.top) * cols + c + w.left] * 255.0)
        .collect();
    Frame::new(report.frame_id.clone(), w.rows, w.cols, pixels).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Arch};

    #[test]
    fn all_zero_frame_has_no_boxes() {
        let model = build_model(Arch::Model1, 0).unwrap();
        let frame = Frame::filled("z", 48, 64, 0.0);
        let config = DetectConfig {
            stride: 16,
            ..Default::default()
        };
        let report = detect_frame(&model, &EIGHT_BIT, &frame, &config).unwrap();
        assert!(report.boxes.is_empty());
        assert_eq!(report.stitched.unwrap().max(), 0.0);
    }

    #[test]
    fn grid_covers_padded_frame() {
        let frame = Frame::filled("f", 480, 640, 10.0);
        let p = prepare_frame(&frame, &EIGHT_BIT, 4, DEFAULT_PAD).unwrap();
        assert_eq!(p.grid.count(), 19_481);
        assert_eq!((p.padded.rows, p.padded.cols), (496, 656));
    }

    #[test]
    fn batch_size_does_not_change_output() {
        let model = build_model(Arch::Model1, 5).unwrap();
        let frame = Frame::new("r", 24, 24, (0..576).map(|i| ((i * 37) % 251) as f64).collect()).unwrap();
        let cfg = |batch_size| DetectConfig {
            stride: 4,
            batch_size,
            postprocess: PostprocessConfig {
                val: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = detect_frame(&model, &EIGHT_BIT, &frame, &cfg(7)).unwrap();
        let b = detect_frame(&model, &EIGHT_BIT, &frame, &cfg(1000)).unwrap();
        assert_eq!(a.stitched, b.stitched);
    }
}
