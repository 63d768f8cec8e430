//! Detector post-processing: box normalization, IoU and greedy NMS.
//!
//! Suppression is class-agnostic. Boxes only mark foreground regions for the
//! prompts, so `class_hint` is carried along but never consulted.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("box has non-positive width or height after conversion ({width} x {height})")]
    NonPositiveDimension { width: f64, height: f64 },
    #[error("image dimensions must be positive, got {width} x {height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("invalid box: {0}")]
    InvalidBox(&'static str),
    #[error("invalid NMS config: {0}")]
    InvalidConfig(&'static str),
}

/// Layout of the four numbers in a raw detector box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFormat {
    /// `(cx, cy, w, h)`
    CenterWh,
    /// `(x1, y1, x2, y2)`
    CornerXyxy,
}

/// One detector prediction in pixel units, before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub coords: [f64; 4],
    pub format: BoxFormat,
    pub score: f64,
    pub class_hint: Option<String>,
}

impl RawDetection {
    pub fn new(coords: [f64; 4], format: BoxFormat, score: f64) -> Self {
        Self { coords, format, score, class_hint: None }
    }

    /// Pixel-space `(cx, cy, w, h)`.
    pub fn center_wh(&self) -> [f64; 4] {
        let [a, b, c, d] = self.coords;
        match self.format {
            BoxFormat::CenterWh => [a, b, c, d],
            BoxFormat::CornerXyxy => [(a + c) / 2.0, (b + d) / 2.0, c - a, d - b],
        }
    }

    /// Checks the score range and that the box has positive extent.
    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(DetectionError::InvalidBox("score outside [0, 1]"));
        }
        if self.coords.iter().any(|v| !v.is_finite()) {
            return Err(DetectionError::InvalidBox("non-finite coordinate"));
        }
        let [_, _, w, h] = self.center_wh();
        if w <= 0.0 || h <= 0.0 {
            return Err(DetectionError::NonPositiveDimension { width: w, height: h });
        }
        Ok(())
    }
}

/// Center-format box normalized to the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, DetectionError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(cx) && unit(cy) && unit(w) && unit(h)) {
            return Err(DetectionError::InvalidBox("field outside [0, 1]"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(DetectionError::NonPositiveDimension { width: w, height: h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from normalized corners, clamping them into `[0, 1]²`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DetectionError> {
        let (x1, x2) = (x1.clamp(0.0, 1.0), x2.clamp(0.0, 1.0));
        let (y1, y2) = (y1.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
        let (w, h) = (x2 - x1, y2 - y1);
        if w <= 0.0 || h <= 0.0 {
            return Err(DetectionError::NonPositiveDimension { width: w, height: h });
        }
        Ok(Self { cx: (x1 + x2) / 2.0, cy: (y1 + y2) / 2.0, w, h })
    }

    /// `(x1, y1, x2, y2)` in normalized units.
    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh]
    }

    pub fn area(&self) -> f64 {
        let [x1, y1, x2, y2] = self.corners();
        (x2 - x1) * (y2 - y1)
    }

    /// Pixel-space `(cx, cy, w, h)` for an image of the given size.
    pub fn denormalize(&self, image_w: u32, image_h: u32) -> [f64; 4] {
        let (iw, ih) = (f64::from(image_w), f64::from(image_h));
        [self.cx * iw, self.cy * ih, self.w * iw, self.h * ih]
    }
}

/// Intersection over union. Zero when the union is degenerate.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Converts a raw pixel detection into a normalized center box.
///
/// Corner boxes are converted to center form first. Boxes that spill over
/// the image border are clamped, not rejected.
pub fn normalize_box(raw: &RawDetection, image_w: u32, image_h: u32) -> Result<BoundingBox, DetectionError> {
    if image_w == 0 || image_h == 0 {
        return Err(DetectionError::EmptyImage { width: image_w, height: image_h });
    }
    let [cx, cy, w, h] = raw.center_wh();
    if !(w > 0.0 && h > 0.0) {
        return Err(DetectionError::NonPositiveDimension { width: w, height: h });
    }
    let (iw, ih) = (f64::from(image_w), f64::from(image_h));
    BoundingBox::from_corners(
        (cx - w / 2.0) / iw,
        (cy - h / 2.0) / ih,
        (cx + w / 2.0) / iw,
        (cy + h / 2.0) / ih,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub max_detections: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self { score_threshold: 0.5, iou_threshold: 0.5, max_detections: 20 }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(DetectionError::InvalidConfig("score_threshold must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(DetectionError::InvalidConfig("iou_threshold must lie in [0, 1]"));
        }
        if self.max_detections == 0 {
            return Err(DetectionError::InvalidConfig("max_detections must be at least 1"));
        }
        Ok(())
    }
}

/// A normalized box with its detector confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_hint: Option<String>,
}

impl ScoredBox {
    pub fn new(bbox: BoundingBox, score: f64) -> Self {
        Self { bbox, score, class_hint: None }
    }
}

/// Greedy non-maximum suppression.
///
/// Drops boxes under the score threshold, stable-sorts the rest by
/// descending score (ties keep input order), then walks the list keeping each
/// box that overlaps no already-kept box by more than the IoU threshold.
pub fn nms(detections: &[ScoredBox], cfg: &NmsConfig) -> Vec<ScoredBox> {
    let mut order: Vec<&ScoredBox> =
        detections.iter().filter(|d| d.score >= cfg.score_threshold).collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));

    let mut kept: Vec<ScoredBox> = Vec::new();
    for candidate in order {
        if kept.len() == cfg.max_detections {
            break;
        }
        if kept.iter().all(|k| iou(&k.bbox, &candidate.bbox) <= cfg.iou_threshold) {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Post-NMS boxes for one image, in descending score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionTokenSet {
    pub image_id: String,
    pub detector_id: String,
    pub boxes: Vec<ScoredBox>,
}

impl PerceptionTokenSet {
    pub fn empty(image_id: impl Into<String>, detector_id: impl Into<String>) -> Self {
        Self { image_id: image_id.into(), detector_id: detector_id.into(), boxes: Vec::new() }
    }

    pub fn from_detections(
        image_id: impl Into<String>,
        detector_id: impl Into<String>,
        detections: &[ScoredBox],
        cfg: &NmsConfig,
    ) -> Self {
        Self { image_id: image_id.into(), detector_id: detector_id.into(), boxes: nms(detections, cfg) }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}
