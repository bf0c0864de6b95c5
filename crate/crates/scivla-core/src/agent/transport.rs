//! Chat-completions transport for the remote code agent: a real HTTP client
//! with an in-flight request cap, and a scripted transport for offline use
//! and tests.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the bearer token for the remote backend.
pub const API_KEY_ENV: &str = "SCIVLA_API_KEY";

fn default_path() -> String {
    "/v1/chat/completions".to_string()
}
fn default_temperature() -> f64 {
    0.0
}
fn default_timeout_secs() -> u64 {
    30
}
fn default_max_in_flight() -> usize {
    4
}

/// Connection settings for a chat-completions-style endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: "user".to_string(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: "assistant".to_string(), content: content.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingApiKey,
    #[error("request failed: {0}")]
    Http(String),
    #[error("endpoint returned status {status}: {body}")]
    BadStatus { status: u16, body: String },
    #[error("malformed completion reply: {0}")]
    MalformedReply(String),
    #[error("scripted transport ran out of replies")]
    ScriptExhausted,
}

/// Blocking chat-completion call; one reply string per request.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Counting semaphore bounding concurrent requests.
struct InFlightGate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(cap: usize) -> InFlightGate {
        InFlightGate { slots: Mutex::new(cap.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) {
        let mut slots = self.slots.lock().expect("gate lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("gate wait");
        }
        *slots -= 1;
    }

    fn release(&self) {
        *self.slots.lock().expect("gate lock") += 1;
        self.freed.notify_one();
    }
}

/// HTTPS chat-completions client. The bearer token comes from
/// `SCIVLA_API_KEY` at call time.
pub struct HttpTransport {
    endpoint: RemoteEndpoint,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

impl HttpTransport {
    pub fn new(endpoint: RemoteEndpoint) -> Result<HttpTransport, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let gate = InFlightGate::new(endpoint.max_in_flight);
        Ok(HttpTransport { endpoint, client, gate })
    }

    fn url(&self) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), self.endpoint.path)
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| TransportError::MissingApiKey)?;
        self.gate.acquire();
        let result = (|| {
            let response = self
                .client
                .post(self.url())
                .bearer_auth(&key)
                .json(request)
                .send()
                .map_err(|e| TransportError::Http(e.to_string()))?;
            let status = response.status();
            let body = response.text().map_err(|e| TransportError::Http(e.to_string()))?;
            if !status.is_success() {
                return Err(TransportError::BadStatus { status: status.as_u16(), body });
            }
            let reply: CompletionReply = serde_json::from_str(&body)
                .map_err(|e| TransportError::MalformedReply(e.to_string()))?;
            reply
                .choices
                .first()
                .map(|c| c.message.content.clone())
                .ok_or_else(|| TransportError::MalformedReply("no choices in reply".to_string()))
        })();
        self.gate.release();
        result
    }
}

/// Canned-reply transport: pops one scripted result per request and records
/// every request it saw.
#[derive(Default)]
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<Result<String, TransportError>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedTransport {
    pub fn new(replies: Vec<Result<String, TransportError>>) -> ScriptedTransport {
        ScriptedTransport {
            replies: Mutex::new(replies.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn with_replies(replies: &[&str]) -> ScriptedTransport {
        ScriptedTransport::new(replies.iter().map(|r| Ok(r.to_string())).collect())
    }

    pub fn seen_requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("request log lock").clone()
    }
}

impl ChatTransport for ScriptedTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.requests.lock().expect("request log lock").push(request.clone());
        self.replies
            .lock()
            .expect("replies lock")
            .pop_front()
            .unwrap_or(Err(TransportError::ScriptExhausted))
    }
}
