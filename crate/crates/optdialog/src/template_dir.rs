//! Loading prompt templates from a directory of `<role>_<setting>.txt`
//! files. The directory name is the template version.

use std::fs;
use std::path::Path;

use optdialog_core::prompt::templates::{parse_file_name, TemplateError};
use optdialog_core::TemplateSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateDirError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Template { path: String, source: TemplateError },
}

pub fn load_template_dir(dir: &Path) -> Result<TemplateSet, TemplateDirError> {
    let io = |source| TemplateDirError::Io { path: dir.display().to_string(), source };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let (role, setting) = parse_file_name(&name).ok_or_else(|| TemplateDirError::Template {
            path: path.display().to_string(),
            source: TemplateError::BadFileName { file: name.clone() },
        })?;
        let text = fs::read_to_string(&path)
            .map_err(|source| TemplateDirError::Io { path: path.display().to_string(), source })?;
        files.push((role, setting, text));
    }
    files.sort_by_key(|f| (f.0, f.1));
    let version = dir.file_name().and_then(|n| n.to_str()).unwrap_or("custom");
    TemplateSet::from_sources(version, files.iter().map(|(r, s, t)| (*r, *s, t.as_str())))
        .map_err(|source| TemplateDirError::Template { path: dir.display().to_string(), source })
}
