//! Run configuration: file (JSON or TOML) plus command-line overrides.
//!
//! Relative paths in a config file resolve against the file's directory;
//! relative paths given as flags resolve against the working directory.
//! The resolved form, written as `resolved_config.json`, uses absolute paths
//! and is itself a valid config file.

use std::fs;
use std::path::{Path, PathBuf};

use optdialog_core::{AblationSetting, Decoding, LabelSpace, NmsConfig, RunConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image_input::DEFAULT_RESIZE_LONGEST;

pub const DEFAULT_MODEL: &str = "default";
pub const DEFAULT_TIMEOUT_SECS: u64 = 120;
pub const DEFAULT_RETRY_LIMIT: u32 = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {}", .problems.iter().map(|(f, r)| format!("`{f}`: {r}")).collect::<Vec<_>>().join("; "))]
    Invalid { problems: Vec<(String, String)> },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Self::Invalid { problems: vec![(field.into(), reason.into())] }
    }
}

/// Where responses come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock(PathBuf),
    Http(String),
}

impl BackendSpec {
    /// Parses `mock:<path>` or an `http(s)://` URL.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if let Some(path) = text.strip_prefix("mock:") {
            if path.is_empty() {
                return Err(ConfigError::invalid("backend", "mock: needs a script path"));
            }
            Ok(Self::Mock(PathBuf::from(path)))
        } else if text.starts_with("http://") || text.starts_with("https://") {
            Ok(Self::Http(text.into()))
        } else {
            Err(ConfigError::invalid("backend", format!("expected an http(s) URL or mock:<path>, got {text:?}")))
        }
    }

    pub fn to_config_string(&self) -> String {
        match self {
            Self::Mock(p) => format!("mock:{}", p.display()),
            Self::Http(u) => u.clone(),
        }
    }

    fn absolutize(self, base: &Path) -> Self {
        match self {
            Self::Mock(p) => Self::Mock(absolute(base, &p)),
            http => http,
        }
    }
}

/// A config file as written by hand. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub setting: Option<AblationSetting>,
    pub rounds: Option<u32>,
    pub decoding: Option<Decoding>,
    pub nms: Option<NmsConfig>,
    pub retry_limit: Option<u32>,
    pub parallelism: Option<usize>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub manifest: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub labels: Option<Vec<String>>,
    /// 0 disables resizing.
    pub resize_longest: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub template_dir: Option<PathBuf>,
    pub detector_id: Option<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let is_toml = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut file = Self::parse(&text, is_toml).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        file.rebase(&base);
        Ok(file)
    }

    /// Parses config text; an empty or blank text is an empty config.
    pub fn parse(text: &str, is_toml: bool) -> Result<Self, String> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        if is_toml {
            toml::from_str(text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(text).map_err(|e| e.to_string())
        }
    }

    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.manifest, &mut self.detections, &mut self.template_dir].into_iter().flatten() {
            *p = absolute(base, p);
        }
        if let Some(b) = &self.backend {
            if let Some(path) = b.strip_prefix("mock:") {
                self.backend = Some(format!("mock:{}", absolute(base, Path::new(path)).display()));
            }
        }
    }
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub setting: Option<AblationSetting>,
    pub rounds: Option<u32>,
    pub parallelism: Option<usize>,
    pub backend: Option<String>,
    pub manifest: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub model: Option<String>,
    pub template_dir: Option<PathBuf>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub setting: AblationSetting,
    pub rounds: u32,
    pub decoding: Decoding,
    pub nms: NmsConfig,
    pub retry_limit: u32,
    pub parallelism: usize,
    pub backend: Option<String>,
    pub model: String,
    pub manifest: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub labels: Option<Vec<String>>,
    pub resize_longest: u32,
    pub timeout_secs: u64,
    pub template_dir: Option<PathBuf>,
    pub detector_id: String,
}

impl ResolvedConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            setting: self.setting,
            rounds: self.rounds,
            decoding: self.decoding,
            nms: self.nms,
            retry_limit: self.retry_limit,
            parallelism: self.parallelism,
        }
    }

    pub fn backend_spec(&self) -> Result<Option<BackendSpec>, ConfigError> {
        self.backend.as_deref().map(BackendSpec::parse).transpose()
    }

    pub fn label_space(&self) -> Result<Option<LabelSpace>, ConfigError> {
        self.labels
            .as_ref()
            .map(|l| LabelSpace::new(l.iter().map(String::as_str)).map_err(|e| ConfigError::invalid("labels", e.to_string())))
            .transpose()
    }

    pub fn resize(&self) -> Option<u32> {
        (self.resize_longest > 0).then_some(self.resize_longest)
    }

    /// Same config under another setting, with that setting's default rounds
    /// unless `keep_rounds`.
    pub fn with_setting(&self, setting: AblationSetting, keep_rounds: bool) -> Self {
        let mut c = self.clone();
        c.setting = setting;
        if !keep_rounds {
            c.rounds = setting.default_rounds();
        }
        c
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join("resolved_config.json");
        fs::write(&path, self.to_json()).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }
}

/// Merges file and flags, applies defaults and validates every field.
pub fn resolve(file: ConfigFile, overrides: Overrides) -> Result<ResolvedConfig, ConfigError> {
    let cwd = std::env::current_dir().unwrap_or_default();
    let setting = overrides.setting.or(file.setting).unwrap_or(AblationSetting::D);
    let backend = match overrides.backend {
        Some(b) => Some(BackendSpec::parse(&b)?.absolutize(&cwd).to_config_string()),
        None => file.backend,
    };
    let resolved = ResolvedConfig {
        setting,
        rounds: overrides.rounds.or(file.rounds).unwrap_or(setting.default_rounds()),
        decoding: file.decoding.unwrap_or_default(),
        nms: file.nms.unwrap_or_default(),
        retry_limit: file.retry_limit.unwrap_or(DEFAULT_RETRY_LIMIT),
        parallelism: overrides.parallelism.or(file.parallelism).unwrap_or(1),
        backend,
        model: overrides.model.or(file.model).unwrap_or_else(|| DEFAULT_MODEL.into()),
        manifest: overrides.manifest.map(|p| absolute(&cwd, &p)).or(file.manifest),
        detections: overrides.detections.map(|p| absolute(&cwd, &p)).or(file.detections),
        labels: file.labels,
        resize_longest: file.resize_longest.unwrap_or(DEFAULT_RESIZE_LONGEST),
        timeout_secs: file.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS),
        template_dir: overrides.template_dir.map(|p| absolute(&cwd, &p)).or(file.template_dir),
        detector_id: file.detector_id.unwrap_or_else(|| crate::evaluation::DEFAULT_DETECTOR_ID.into()),
    };
    let mut problems: Vec<(String, String)> =
        resolved.run_config().problems().into_iter().map(|p| (p.field.to_string(), p.reason)).collect();
    if resolved.timeout_secs == 0 {
        problems.push(("timeout_secs".into(), "must be at least 1".into()));
    }
    if let Err(ConfigError::Invalid { problems: p }) = resolved.backend_spec() {
        problems.extend(p);
    }
    if let Err(ConfigError::Invalid { problems: p }) = resolved.label_space() {
        problems.extend(p);
    }
    if problems.is_empty() {
        Ok(resolved)
    } else {
        Err(ConfigError::Invalid { problems })
    }
}

/// Loads the optional config file and merges the overrides.
pub fn parse_config(path: Option<&Path>, overrides: Overrides) -> Result<ResolvedConfig, ConfigError> {
    let file = path.map(ConfigFile::load).transpose()?.unwrap_or_default();
    resolve(file, overrides)
}
