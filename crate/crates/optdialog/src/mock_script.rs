//! Mock-script file for the scripted backend.
//!
//! ```json
//! {"default_response": "Category: apple; Reasoning: red",
//!  "entries": [{"image_id": "img1", "role": "vision_analyst", "round": 1, "attempt": 1,
//!               "response": "Verdict: AGREE\nCategory: apple; Reasoning: round"}]}
//! ```
//!
//! `round` and `attempt` are 1-based. An entry may carry an optional
//! `"setting"` (`"a"` to `"d"`) to apply to one ablation setting only.

use std::fs;
use std::path::Path;

use optdialog_core::backend::{MockKey, MockScript};
use optdialog_core::prompt::AgentRole;
use optdialog_core::AblationSetting;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed mock script: {0}")]
    MalformedScript(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFile {
    pub default_response: String,
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub image_id: String,
    pub role: AgentRole,
    pub round: u32,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<AblationSetting>,
    pub response: String,
}

pub fn load_mock_script(path: &Path) -> Result<MockScript, MockScriptError> {
    let text =
        fs::read_to_string(path).map_err(|source| MockScriptError::Io { path: path.display().to_string(), source })?;
    parse_mock_script(&text)
}

pub fn parse_mock_script(text: &str) -> Result<MockScript, MockScriptError> {
    let file: ScriptFile = serde_json::from_str(text).map_err(|e| MockScriptError::MalformedScript(e.to_string()))?;
    script_from_file(file)
}

pub fn script_from_file(file: ScriptFile) -> Result<MockScript, MockScriptError> {
    let mut script = MockScript::new(file.default_response);
    for (i, e) in file.entries.into_iter().enumerate() {
        if e.round == 0 || e.attempt == 0 {
            return Err(MockScriptError::MalformedScript(format!("entry {}: round and attempt are 1-based", i + 1)));
        }
        let key = MockKey { image_id: e.image_id, role: e.role, round: e.round, attempt: e.attempt, setting: e.setting };
        script
            .insert(key, e.response)
            .map_err(|dup| MockScriptError::MalformedScript(format!("entry {}: {dup}", i + 1)))?;
    }
    Ok(script)
}
