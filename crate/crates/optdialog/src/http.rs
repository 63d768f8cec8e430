//! Chat-completion client for OpenAI-style HTTP endpoints.

use std::thread;
use std::time::Duration;

use optdialog_core::{BackendError, ChatBackend, ChatReply, ChatRequest, MessageRole};
use serde::Deserialize;
use serde_json::{json, Value};

pub const API_KEY_ENV: &str = "OPTDIALOG_API_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const TRANSPORT_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub api_key: Option<String>,
    /// Delay before the second attempt; doubles for each further one.
    pub backoff_base: Duration,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self { timeout: DEFAULT_TIMEOUT, api_key: None, backoff_base: Duration::from_millis(500) }
    }
}

impl HttpOptions {
    /// Defaults with the API key read from `OPTDIALOG_API_KEY`.
    pub fn from_env() -> Self {
        Self { api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()), ..Self::default() }
    }
}

pub struct HttpBackend {
    url: String,
    model: String,
    options: HttpOptions,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `url` is the full chat-completions endpoint.
    pub fn new(url: impl Into<String>, model: impl Into<String>, options: HttpOptions) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable { attempts: 0, reason: format!("building HTTP client: {e}") })?;
        Ok(Self { url: url.into(), model: model.into(), options, client })
    }
}

/// The JSON body sent for a request.
pub fn request_body(model: &str, request: &ChatRequest) -> Value {
    let mut image_attached = false;
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            if m.role == MessageRole::User && !image_attached {
                image_attached = true;
                json!({
                    "role": "user",
                    "content": [
                        {"type": "text", "text": m.content},
                        {"type": "image_url", "image_url": {"url": request.image.url()}},
                    ],
                })
            } else {
                json!({"role": m.role.as_str(), "content": m.content})
            }
        })
        .collect();
    json!({
        "model": model,
        "messages": messages,
        "temperature": request.decoding.temperature,
        "max_tokens": request.decoding.max_new_tokens,
    })
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

fn parse_completion(body: &str) -> Result<ChatReply, String> {
    let completion: Completion = serde_json::from_str(body).map_err(|e| format!("malformed response body: {e}"))?;
    let choice = completion.choices.into_iter().next().ok_or("response has no choices")?;
    Ok(ChatReply {
        text: choice.message.content.unwrap_or_default(),
        truncated: choice.finish_reason.as_deref() == Some("length"),
    })
}

enum Attempt {
    Done(Result<ChatReply, BackendError>),
    Transient(String),
}

impl HttpBackend {
    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.options.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Transient(format!("status {}", status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Done(Err(BackendError::Rejected { status: status.as_u16(), body: text }));
        }
        Attempt::Done(parse_completion(&text).map_err(|reason| BackendError::Unavailable { attempts: 1, reason }))
    }
}

impl ChatBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.url
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        request.validate()?;
        let body = request_body(&self.model, request);
        let mut delay = self.options.backoff_base;
        let mut last = String::new();
        for attempt in 1..=TRANSPORT_ATTEMPTS {
            match self.attempt(&body) {
                Attempt::Done(result) => return result,
                Attempt::Transient(reason) => {
                    log::warn!("{}: attempt {attempt}/{TRANSPORT_ATTEMPTS} failed: {reason}", self.url);
                    last = reason;
                }
            }
            if attempt < TRANSPORT_ATTEMPTS {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(BackendError::Unavailable { attempts: TRANSPORT_ATTEMPTS, reason: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_parsing() {
        let r = parse_completion(r#"{"choices":[{"message":{"content":"hi"},"finish_reason":"length"}]}"#).unwrap();
        assert_eq!(r, ChatReply { text: "hi".into(), truncated: true });
        let r = parse_completion(r#"{"choices":[{"message":{"content":"x"},"finish_reason":"stop"}]}"#).unwrap();
        assert!(!r.truncated);
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
        assert!(parse_completion("<html>").is_err());
    }
}
