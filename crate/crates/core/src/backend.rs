//! The model inference boundary.
//!
//! [`ChatBackend`] is the only thing the dialogue loop talks to. The crate
//! ships [`MockBackend`], a scripted deterministic stand-in; the HTTP client
//! lives in the std crate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::AgentRole;
use crate::setting::AblationSetting;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageAttachment {
    Inline { media_type: String, data_base64: String },
    Uri { uri: String },
}

impl ImageAttachment {
    /// Value for a data-URI or plain URL image part.
    pub fn url(&self) -> String {
        match self {
            Self::Inline { media_type, data_base64 } => {
                alloc::format!("data:{media_type};base64,{data_base64}")
            }
            Self::Uri { uri } => uri.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: MessageRole, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub temperature: f64,
    pub max_new_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { temperature: 0.2, max_new_tokens: 512 }
    }
}

/// Where in a dialogue a request sits. Not sent over the wire; the mock
/// backend keys its script on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    pub image_id: String,
    pub setting: AblationSetting,
    pub role: AgentRole,
    /// 1-based dialogue round.
    pub round: u32,
    /// 1-based attempt within the turn; attempt 2 is the first retry.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub image: ImageAttachment,
    pub decoding: Decoding,
    pub context: RequestContext,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be finite and non-negative".into()));
        }
        if self.decoding.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    /// The completion stopped on the token limit.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("backend rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// The chat-completion model behind the dialogue.
///
/// Implementations are shared across worker threads and must tolerate any
/// number of concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn model(&self) -> &str;

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn model(&self) -> &str {
        (**self).model()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        (**self).chat(request)
    }
}

/// Lookup key of a scripted response. A key without a setting matches
/// every setting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MockKey {
    pub image_id: String,
    pub role: AgentRole,
    pub round: u32,
    pub attempt: u32,
    pub setting: Option<AblationSetting>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate mock script entry for {0:?}")]
pub struct DuplicateKey(pub MockKey);

/// Canned responses keyed by `(image_id, role, round, attempt)`, with an
/// optional setting qualifier and a default for every other request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MockScript {
    entries: BTreeMap<MockKey, String>,
    pub default_response: String,
}

impl MockScript {
    pub fn new(default_response: impl Into<String>) -> Self {
        Self { entries: BTreeMap::new(), default_response: default_response.into() }
    }

    pub fn insert(&mut self, key: MockKey, response: impl Into<String>) -> Result<(), DuplicateKey> {
        if self.entries.contains_key(&key) {
            return Err(DuplicateKey(key));
        }
        self.entries.insert(key, response.into());
        Ok(())
    }

    /// Builder-style insert that panics on duplicates; meant for tests.
    pub fn with(
        mut self,
        image_id: &str,
        role: AgentRole,
        round: u32,
        attempt: u32,
        setting: Option<AblationSetting>,
        response: &str,
    ) -> Self {
        let key = MockKey { image_id: image_id.into(), role, round, attempt, setting };
        self.insert(key, response).expect("duplicate mock entry");
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&MockKey, &str)> {
        self.entries.iter().map(|(k, v)| (k, v.as_str()))
    }

    /// Setting-specific entry, then the setting-agnostic one, then the default.
    pub fn lookup(&self, ctx: &RequestContext) -> &str {
        let mut key = MockKey {
            image_id: ctx.image_id.clone(),
            role: ctx.role,
            round: ctx.round,
            attempt: ctx.attempt,
            setting: Some(ctx.setting),
        };
        if let Some(v) = self.entries.get(&key) {
            return v;
        }
        key.setting = None;
        self.entries.get(&key).map_or(self.default_response.as_str(), String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    script: MockScript,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, script: MockScript) -> Self {
        Self { id: id.into(), script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatBackend for MockBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        "mock"
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        request.validate()?;
        Ok(ChatReply { text: self.script.lookup(&request.context).into(), truncated: false })
    }
}
