use std::time::Duration;

use optdialog::http::{request_body, HttpBackend, HttpOptions};
use optdialog::stub::{StubReply, StubServer};
use optdialog_core::{
    AblationSetting, AgentRole, BackendError, ChatBackend, ChatMessage, ChatReply, ChatRequest, Decoding, ImageAttachment,
    MessageRole, RequestContext,
};

fn request(decoding: Decoding) -> ChatRequest {
    ChatRequest {
        messages: vec![
            ChatMessage::new(MessageRole::System, "sys"),
            ChatMessage::new(MessageRole::User, "look at this"),
        ],
        image: ImageAttachment::Uri { uri: "https://example.org/a.png".into() },
        decoding,
        context: RequestContext {
            image_id: "x".into(),
            setting: AblationSetting::B,
            role: AgentRole::Generalist,
            round: 1,
            attempt: 1,
        },
    }
}

fn options(api_key: Option<&str>) -> HttpOptions {
    HttpOptions { api_key: api_key.map(String::from), backoff_base: Duration::from_millis(1), ..HttpOptions::default() }
}

#[test]
fn fixed_body_comes_back() {
    let stub = StubServer::start(vec![StubReply::completion("Category: apple; Reasoning: red", "stop")]).unwrap();
    let http = HttpBackend::new(stub.url(), "vlm", options(Some("secret"))).unwrap();
    let reply = http.chat(&request(Decoding::default())).unwrap();
    assert_eq!(reply, ChatReply { text: "Category: apple; Reasoning: red".into(), truncated: false });
    let seen = stub.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].header("authorization"), Some("Bearer secret"));
    assert_eq!(seen[0].header("content-type"), Some("application/json"));
    assert_eq!(seen[0].json(), request_body("vlm", &request(Decoding::default())));
}

#[test]
fn decoding_serialized_as_configured() {
    let stub = StubServer::start(vec![StubReply::completion("x", "stop")]).unwrap();
    let http = HttpBackend::new(stub.url(), "vlm", options(None)).unwrap();
    http.chat(&request(Decoding { temperature: 0.0, max_new_tokens: 77 })).unwrap();
    let body = stub.requests()[0].json();
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 77);
    assert_eq!(stub.requests()[0].header("authorization"), None);
    assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "https://example.org/a.png");
}

#[test]
fn truncation_reported() {
    let stub = StubServer::start(vec![StubReply::completion("Category: app", "length")]).unwrap();
    let http = HttpBackend::new(stub.url(), "vlm", options(None)).unwrap();
    assert!(http.chat(&request(Decoding::default())).unwrap().truncated);
}

#[test]
fn invalid_request_never_sent() {
    let stub = StubServer::start(vec![StubReply::completion("x", "stop")]).unwrap();
    let http = HttpBackend::new(stub.url(), "vlm", options(None)).unwrap();
    let bad = request(Decoding { temperature: -0.5, max_new_tokens: 10 });
    assert!(matches!(http.chat(&bad), Err(BackendError::InvalidRequest(_))));
    assert!(stub.requests().is_empty());
}

#[test]
fn malformed_body_is_an_error() {
    let stub = StubServer::start(vec![StubReply::new(200, "{\"unexpected\":true}")]).unwrap();
    let http = HttpBackend::new(stub.url(), "vlm", options(None)).unwrap();
    assert!(matches!(http.chat(&request(Decoding::default())), Err(BackendError::Unavailable { .. })));
}

#[test]
fn connection_refused_retries_then_gives_up() {
    let url = {
        let stub = StubServer::start(vec![StubReply::new(200, "{}")]).unwrap();
        stub.url()
    };
    let http = HttpBackend::new(url, "vlm", options(None)).unwrap();
    assert!(matches!(http.chat(&request(Decoding::default())), Err(BackendError::Unavailable { attempts: 3, .. })));
}

#[test]
fn only_first_user_message_carries_the_image() {
    let mut req = request(Decoding::default());
    req.messages.push(ChatMessage::new(MessageRole::Assistant, "bad"));
    req.messages.push(ChatMessage::new(MessageRole::User, "again"));
    let body = request_body("m", &req);
    let msgs = body["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 4);
    assert!(msgs[1]["content"].is_array());
    assert_eq!(msgs[2], serde_json::json!({"role": "assistant", "content": "bad"}));
    assert_eq!(msgs[3], serde_json::json!({"role": "user", "content": "again"}));
}
