//! Dataset manifest: CSV with header `image_id,image_path,label`.
//!
//! Relative image paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use optdialog_core::{DatasetError, DatasetManifest, LabelSpace};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: row {row}: {reason}")]
    MalformedRow { path: String, row: usize, reason: String },
    #[error("{path}: header must be image_id,image_path,label (found {found})")]
    BadHeader { path: String, found: String },
    #[error("{path}: {source}")]
    Dataset { path: String, source: DatasetError },
}

#[derive(Debug, Deserialize)]
struct Row {
    image_id: String,
    image_path: String,
    label: String,
}

/// Loads a manifest. With `labels = None` the label space is derived from
/// the ground truths.
pub fn load_manifest(path: &Path, labels: Option<LabelSpace>) -> Result<DatasetManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base, labels).map_err(|e| e.with_path(path))
}

/// Parses manifest text, resolving relative paths against `base`.
pub fn parse_manifest(text: &str, base: &Path, labels: Option<LabelSpace>) -> Result<DatasetManifest, ManifestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ManifestError::MalformedRow { path: String::new(), row: 1, reason: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["image_id", "image_path", "label"] {
        return Err(ManifestError::BadHeader { path: String::new(), found: headers.iter().collect::<Vec<_>>().join(",") });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<Row>().enumerate() {
        let row = record
            .map_err(|e| ManifestError::MalformedRow { path: String::new(), row: i + 2, reason: e.to_string() })?;
        let resolved = resolve(base, &row.image_path);
        rows.push((row.image_id, resolved.to_string_lossy().into_owned(), row.label));
    }
    DatasetManifest::new(rows, labels).map_err(|source| ManifestError::Dataset { path: String::new(), source })
}

fn resolve(base: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ManifestError {
    fn with_path(self, p: &Path) -> Self {
        let path = p.display().to_string();
        match self {
            Self::MalformedRow { row, reason, .. } => Self::MalformedRow { path, row, reason },
            Self::BadHeader { found, .. } => Self::BadHeader { path, found },
            Self::Dataset { source, .. } => Self::Dataset { path, source },
            io @ Self::Io { .. } => io,
        }
    }
}
