//! Bounding boxes and the annotation-set JSON schema.
//!
//! ```json
//! [{"frame_id": "f0001",
//!   "boxes": [{"x": 12, "y": 40, "w": 11, "h": 9, "class": "egg",
//!              "source": "human", "verdict": "unreviewed"}]}]
//! ```
//!
//! Coordinates are in unpadded pixel space with the origin at the top-left
//! corner; `x`/`w` run along columns and `y`/`h` along rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EGG_CLASS: &str = "egg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxSource {
    #[default]
    Human,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    #[default]
    Unreviewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default = "egg_class")]
    pub class: String,
    #[serde(default)]
    pub source: BoxSource,
    #[serde(default)]
    pub verdict: Verdict,
    /// Peak activation for model detections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

fn egg_class() -> String {
    EGG_CLASS.to_string()
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            x,
            y,
            w,
            h,
            class: egg_class(),
            source: BoxSource::Human,
            verdict: Verdict::Unreviewed,
            score: None,
        }
    }

    pub fn detection(x: f64, y: f64, w: f64, h: f64, score: f64) -> Self {
        Self {
            source: BoxSource::Model,
            score: Some(score),
            ..Self::new(x, y, w, h)
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// `(row, col)` centre.
    pub fn center(&self) -> (f64, f64) {
        (self.y + self.h / 2.0, self.x + self.w / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let h = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        w * h
    }

    /// Exactly 1 only for identical geometry; rounding never lifts a
    /// different box to 1 or drops an identical one below it.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        if (self.x, self.y, self.w, self.h) == (other.x, other.y, other.w, other.h) {
            return if self.area() > 0.0 { 1.0 } else { 0.0 };
        }
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            (inter / union).min(1.0 - f64::EPSILON / 2.0)
        } else {
            0.0
        }
    }

    /// True when this box lies inside the `rows x cols` window at `(top, left)`.
    pub fn inside(&self, top: f64, left: f64, rows: f64, cols: f64) -> bool {
        self.x >= left && self.y >= top && self.right() <= left + cols && self.bottom() <= top + rows
    }

    pub fn overlaps(&self, top: f64, left: f64, rows: f64, cols: f64) -> bool {
        self.x < left + cols && self.right() > left && self.y < top + rows && self.bottom() > top
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate box x={} y={} w={} h={}",
                self.x, self.y, self.w, self.h
            )));
        }
        if self.class != EGG_CLASS {
            return Err(Error::InvalidArgument(format!("unknown class {:?}", self.class)));
        }
        Ok(())
    }

    /// Shifts the box and clips it to `rows x cols`; `None` if nothing is left.
    pub fn translated_clipped(&self, dy: f64, dx: f64, rows: f64, cols: f64) -> Option<BoundingBox> {
        let x0 = (self.x + dx).max(0.0);
        let y0 = (self.y + dy).max(0.0);
        let x1 = (self.right() + dx).min(cols);
        let y1 = (self.bottom() + dy).min(rows);
        (x1 > x0 && y1 > y0).then(|| BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameAnnotations {
    pub frame_id: String,
    pub boxes: Vec<BoundingBox>,
}

impl FrameAnnotations {
    pub fn new(frame_id: impl Into<String>, boxes: Vec<BoundingBox>) -> Self {
        Self {
            frame_id: frame_id.into(),
            boxes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_id.is_empty() {
            return Err(Error::InvalidArgument("empty frame_id".into()));
        }
        self.boxes.iter().try_for_each(BoundingBox::validate)
    }

    /// Canonical JSON: keys sorted, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self)
    }
}

/// Serializes with object keys in sorted order.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Value map is a BTreeMap, so the round trip sorts keys.
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationSet(pub Vec<FrameAnnotations>);

impl AnnotationSet {
    pub fn get(&self, frame_id: &str) -> Option<&FrameAnnotations> {
        self.0.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn get_mut(&mut self, frame_id: &str) -> Option<&mut FrameAnnotations> {
        self.0.iter_mut().find(|f| f.frame_id == frame_id)
    }

    pub fn boxes_for(&self, frame_id: &str) -> &[BoundingBox] {
        self.get(frame_id).map(|f| f.boxes.as_slice()).unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<()> {
        self.0.iter().try_for_each(FrameAnnotations::validate)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_json()? + "\n")?;
        Ok(())
    }
}
