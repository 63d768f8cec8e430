//! Detections file: one JSON object per line.
//!
//! ```text
//! {"image_id": "img1", "format": "corner_xyxy", "box": [0, 0, 320, 320], "score": 0.91, "class_hint": "apple"}
//! ```
//!
//! Records of one image must be contiguous; an image id that reappears after
//! another image's records is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use optdialog_core::detection::{BoxFormat, RawDetection};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectionsFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: records for image {image_id:?} are not contiguous (first seen on line {first_line})")]
    DuplicateImageEntry { line: usize, image_id: String, first_line: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    image_id: String,
    format: BoxFormat,
    #[serde(rename = "box")]
    coords: [f64; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_hint: Option<String>,
}

/// Raw detections per image, read-only once loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionsMap {
    by_image: BTreeMap<String, Vec<RawDetection>>,
}

impl DetectionsMap {
    /// Detections of an image in file order; empty when the image has none.
    pub fn get(&self, image_id: &str) -> &[RawDetection] {
        self.by_image.get(image_id).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.by_image.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.by_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.by_image.keys().map(String::as_str)
    }
}

pub fn load_detections(path: &Path) -> Result<DetectionsMap, DetectionsFileError> {
    let text = fs::read_to_string(path)
        .map_err(|source| DetectionsFileError::Io { path: path.display().to_string(), source })?;
    parse_detections(&text)
}

pub fn parse_detections(text: &str) -> Result<DetectionsMap, DetectionsFileError> {
    let mut by_image: BTreeMap<String, Vec<RawDetection>> = BTreeMap::new();
    let mut first_line: BTreeMap<String, usize> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DetectionsFileError::MalformedRecord { line: line_no, reason };
        let record: Record = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if record.image_id.is_empty() {
            return Err(malformed("empty image_id".into()));
        }
        let raw = RawDetection {
            coords: record.coords,
            format: record.format,
            score: record.score,
            class_hint: record.class_hint,
        };
        raw.validate().map_err(|e| malformed(e.to_string()))?;

        if current.as_deref() != Some(record.image_id.as_str()) {
            if let Some(&first) = first_line.get(&record.image_id) {
                return Err(DetectionsFileError::DuplicateImageEntry {
                    line: line_no,
                    image_id: record.image_id,
                    first_line: first,
                });
            }
            first_line.insert(record.image_id.clone(), line_no);
            current = Some(record.image_id.clone());
        }
        by_image.entry(record.image_id).or_default().push(raw);
    }
    Ok(DetectionsMap { by_image })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_records_one_image() {
        let text = concat!(
            r#"{"image_id":"img1","format":"center_wh","box":[10,10,4,4],"score":0.9}"#, "\n",
            r#"{"image_id":"img1","format":"corner_xyxy","box":[0,0,5,5],"score":0.6,"class_hint":"apple"}"#, "\n",
        );
        let map = parse_detections(text).unwrap();
        assert_eq!(map.len(), 1);
        let dets = map.get("img1");
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].format, BoxFormat::CenterWh);
        assert_eq!(dets[1].class_hint.as_deref(), Some("apple"));
        assert!(map.get("other").is_empty());
    }

    #[test]
    fn empty_file() {
        assert!(parse_detections("").unwrap().is_empty());
    }

    #[test]
    fn score_out_of_range() {
        let text = r#"{"image_id":"img1","format":"center_wh","box":[10,10,4,4],"score":1.5}"#;
        assert!(matches!(parse_detections(text), Err(DetectionsFileError::MalformedRecord { line: 1, .. })));
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let text = "\n{\"image_id\":\"a\",\"format\":\"center_wh\",\"box\":[1,1,1,1],\"score\":0.5}\nnot json\n";
        assert!(matches!(parse_detections(text), Err(DetectionsFileError::MalformedRecord { line: 3, .. })));
        let bad_format = r#"{"image_id":"a","format":"xywh","box":[1,1,1,1],"score":0.5}"#;
        assert!(parse_detections(bad_format).is_err());
        let three = r#"{"image_id":"a","format":"center_wh","box":[1,1,1],"score":0.5}"#;
        assert!(parse_detections(three).is_err());
        let flat = r#"{"image_id":"a","format":"corner_xyxy","box":[5,5,5,9],"score":0.5}"#;
        assert!(parse_detections(flat).is_err());
    }

    #[test]
    fn non_contiguous_image_rejected() {
        let text = concat!(
            r#"{"image_id":"a","format":"center_wh","box":[1,1,1,1],"score":0.5}"#, "\n",
            r#"{"image_id":"b","format":"center_wh","box":[1,1,1,1],"score":0.5}"#, "\n",
            r#"{"image_id":"a","format":"center_wh","box":[1,1,1,1],"score":0.5}"#, "\n",
        );
        assert!(matches!(
            parse_detections(text),
            Err(DetectionsFileError::DuplicateImageEntry { line: 3, first_line: 1, .. })
        ));
    }
}
