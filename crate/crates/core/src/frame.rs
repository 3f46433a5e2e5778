//! Grayscale frames, 8-bit PGM/PNG I/O and box overlays.

use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::annotations::BoundingBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A single-channel image. Raw frames hold intensities in `[0, 255]`,
/// normalized frames in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl Frame {
    pub fn new(id: impl Into<String>, rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || pixels.len() != rows * cols {
            return Err(Error::ElementCount {
                shape: vec![rows, cols],
                len: pixels.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            rows,
            cols,
            pixels,
        })
    }

    pub fn filled(id: impl Into<String>, rows: usize, cols: usize, value: f64) -> Self {
        Self {
            id: id.into(),
            rows,
            cols,
            pixels: vec![value; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.cols + col] = value;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.rows, self.cols], self.pixels.clone()).expect("frame dimensions are consistent")
    }

    pub fn from_gray8(id: impl Into<String>, img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            id: id.into(),
            rows: h as usize,
            cols: w as usize,
            pixels: img.as_raw().iter().map(|&v| v as f64).collect(),
        }
    }

    /// Rounds `value * scale` to 8 bits, clamping to `[0, 255]`.
    pub fn to_gray8(&self, scale: f64) -> GrayImage {
        let raw = self
            .pixels
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::from_raw(self.cols as u32, self.rows as u32, raw).expect("buffer matches dimensions")
    }

    /// Loads an 8-bit grayscale PGM or PNG (other formats are converted to
    /// luma). The frame id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::from_gray8(id, &img.to_luma8()))
    }

    /// Writes raw-scale pixels as binary PGM (`.pgm`) or PNG (anything else).
    pub fn save(&self, path: &Path) -> Result<()> {
        save_gray(&self.to_gray8(1.0), path)
    }

    /// Writes a `[0, 1]` frame, scaled to 8 bits.
    pub fn save_normalized(&self, path: &Path) -> Result<()> {
        save_gray(&self.to_gray8(255.0), path)
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let file = BufWriter::new(std::fs::File::create(path)?);
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
            .map_err(image_err(path))
    } else {
        img.save_with_format(path, image::ImageFormat::Png).map_err(image_err(path))
    }
}

/// PNG bytes of an 8-bit image.
pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: "<memory>".into(),
        source,
    })?;
    Ok(buf.into_inner())
}

/// Box colours for overlays: matched detections, false alarms, misses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxStyle {
    Matched,
    FalseAlarm,
    Missed,
    Detection,
}

impl BoxStyle {
    pub fn color(self) -> Rgb<u8> {
        match self {
            BoxStyle::Matched | BoxStyle::Detection => Rgb([160, 32, 240]),
            BoxStyle::FalseAlarm => Rgb([255, 140, 0]),
            BoxStyle::Missed => Rgb([255, 230, 0]),
        }
    }
}

/// Burns 1-pixel box outlines into a grayscale copy of `frame`
/// (raw `[0, 255]` scale).
pub fn render_overlay(frame: &Frame, boxes: &[(BoundingBox, BoxStyle)]) -> RgbImage {
    let gray = frame.to_gray8(1.0);
    let mut img = RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    let (w, h) = (img.width() as i64, img.height() as i64);
    for (bb, style) in boxes {
        let x0 = bb.x.floor() as i64;
        let y0 = bb.y.floor() as i64;
        let x1 = (bb.x + bb.w).ceil() as i64 - 1;
        let y1 = (bb.y + bb.h).ceil() as i64 - 1;
        let mut put = |x: i64, y: i64| {
            if (0..w).contains(&x) && (0..h).contains(&y) {
                img.put_pixel(x as u32, y as u32, style.color());
            }
        };
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<f64> = (0..12 * 7).map(|i| (i * 3 % 256) as f64).collect();
        let f = Frame::new("f", 7, 12, pixels).unwrap();
        for name in ["f.pgm", "f.png"] {
            let path = dir.path().join(name);
            f.save(&path).unwrap();
            let back = Frame::load(&path).unwrap();
            assert_eq!(back, f);
        }
        let header = std::fs::read(dir.path().join("f.pgm")).unwrap();
        assert_eq!(&header[..2], b"P5");
    }

    #[test]
    fn overlay_draws_outline() {
        let f = Frame::filled("z", 10, 10, 0.0);
        let bb = BoundingBox::new(2.0, 3.0, 4.0, 4.0);
        let img = render_overlay(&f, &[(bb, BoxStyle::Matched)]);
        assert_eq!(*img.get_pixel(2, 3), BoxStyle::Matched.color());
        assert_eq!(*img.get_pixel(5, 6), BoxStyle::Matched.color());
        assert_eq!(*img.get_pixel(3, 4), Rgb([0, 0, 0]));
    }
}
