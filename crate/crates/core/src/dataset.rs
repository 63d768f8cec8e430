use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{LabelError, LabelSpace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("image id {0:?} appears more than once")]
    DuplicateImageId(String),
    #[error("image id {0:?} is not usable as a file name")]
    BadImageId(String),
    #[error("image {image_id:?}: ground truth {label:?} is not in the label space")]
    UnknownGroundTruth { image_id: String, label: String },
    #[error(transparent)]
    Labels(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: String,
    pub label_index: usize,
}

/// Evaluation images with their ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    labels: LabelSpace,
    by_id: BTreeMap<String, usize>,
}

impl DatasetManifest {
    /// Builds a manifest from `(image_id, image_path, label)` rows.
    ///
    /// Without an explicit label space, the classes are the distinct ground
    /// truths sorted by name.
    pub fn new<I>(rows: I, labels: Option<LabelSpace>) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = (String, String, String)>,
    {
        let rows: Vec<(String, String, String)> = rows.into_iter().collect();
        let labels = match labels {
            Some(l) => l,
            None => {
                let mut names: Vec<String> = Vec::new();
                for (_, _, label) in &rows {
                    let label = String::from(label.trim());
                    if !names.iter().any(|n| crate::labels::normalize(n) == crate::labels::normalize(&label)) {
                        names.push(label);
                    }
                }
                names.sort();
                LabelSpace::new(names)?
            }
        };
        let mut entries = Vec::with_capacity(rows.len());
        let mut by_id = BTreeMap::new();
        for (image_id, image_path, label) in rows {
            if image_id.is_empty() || image_id.starts_with('.') || image_id.contains(['/', '\\']) {
                return Err(DatasetError::BadImageId(image_id));
            }
            let label_index = labels
                .exact_index(&label)
                .ok_or_else(|| DatasetError::UnknownGroundTruth { image_id: image_id.clone(), label })?;
            if by_id.insert(image_id.clone(), entries.len()).is_some() {
                return Err(DatasetError::DuplicateImageId(image_id));
            }
            entries.push(ManifestEntry { image_id, image_path, label_index });
        }
        Ok(Self { entries, labels, by_id })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.by_id.get(image_id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
