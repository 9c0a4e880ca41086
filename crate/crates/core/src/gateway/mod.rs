//! Chat-completion client shared by every prompt the pipeline sends.
//!
//! A [`ChatGateway`] talks to an OpenAI-compatible endpoint through a
//! [`Transport`] and keeps three modes:
//!
//! - `live`: send the request, return the response.
//! - `record`: like live, but every exchange is appended to a cassette file
//!   before it is returned.
//! - `replay`: never touch the transport; answer from the cassette by request
//!   hash, serving identical hashes in recorded order.

mod cassette;
mod transport;

use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use cassette::{read_cassette, CassetteEntry, CassetteWriter, ReplayCassette};
pub use transport::{HttpTransport, Transport, TransportFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Prompt and completion token counts reported by the provider.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self { prompt_tokens, completion_tokens }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before each retry, in milliseconds.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendProfile {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_response_tokens: u32,
    pub retry_policy: RetryPolicy,
    pub mode: GatewayMode,
    pub cassette_path: Option<PathBuf>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-3.5-turbo-16k".to_string(),
            temperature: 0.2,
            max_response_tokens: 4096,
            retry_policy: RetryPolicy::default(),
            mode: GatewayMode::Live,
            cassette_path: None,
            api_key_env: "OPENAI_API_KEY".to_string(),
        }
    }
}

impl BackendProfile {
    pub fn replay(cassette: impl Into<PathBuf>) -> Self {
        Self { mode: GatewayMode::Replay, cassette_path: Some(cassette.into()), ..Self::default() }
    }

    pub fn record(cassette: impl Into<PathBuf>) -> Self {
        Self { mode: GatewayMode::Record, cassette_path: Some(cassette.into()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.retry_policy.max_attempts == 0 {
            return Err(GatewayError::Config("retry max_attempts must be at least 1".into()));
        }
        if self.mode != GatewayMode::Live && self.cassette_path.is_none() {
            return Err(GatewayError::Config(format!("{:?} mode requires a cassette path", self.mode)));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::Config("model name is empty".into()));
        }
        Ok(())
    }
}

/// One completed request/response pair as it enters the session ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: Vec<ChatMessage>,
    pub response: ChatMessage,
    pub usage: TokenUsage,
    pub backend: String,
    pub sequence_no: u64,
    pub request_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("replay mismatch for request {hash}: {detail}")]
    ReplayMismatch { hash: String, detail: String },
    #[error("empty response: {0}")]
    EmptyResponse(String),
    #[error("cassette error: {0}")]
    Cassette(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::InvalidTranscript(_) => "InvalidTranscript",
            GatewayError::Transport { .. } => "TransportError",
            GatewayError::ReplayMismatch { .. } => "ReplayMismatch",
            GatewayError::EmptyResponse(_) => "EmptyResponse",
            GatewayError::Cassette(_) => "CassetteError",
            GatewayError::Config(_) => "ConfigError",
        }
    }
}

/// Digest over roles and contents only; model settings do not participate.
pub fn request_hash(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        // length-prefixed so that no content can forge a message boundary
        hasher.update(m.role.as_str().as_bytes());
        hasher.update(b":");
        hasher.update(m.content.len().to_string().as_bytes());
        hasher.update(b":");
        hasher.update(m.content.as_bytes());
        hasher.update(b"\n");
    }
    format!("sha256:{}", hex::encode(hasher.finalize()))
}

pub fn usage_total(exchanges: &[ChatExchange]) -> TokenUsage {
    exchanges.iter().map(|e| e.usage).sum()
}

pub fn validate_transcript(messages: &[ChatMessage]) -> Result<(), GatewayError> {
    let first = messages.first().ok_or_else(|| GatewayError::InvalidTranscript("no messages".into()))?;
    if first.role != Role::System {
        return Err(GatewayError::InvalidTranscript("first message must be the system message".into()));
    }
    if messages.iter().filter(|m| m.role == Role::System).count() != 1 {
        return Err(GatewayError::InvalidTranscript("exactly one system message is allowed".into()));
    }
    if let Some(i) = messages.iter().position(|m| m.content.trim().is_empty()) {
        return Err(GatewayError::InvalidTranscript(format!("message {i} has empty content")));
    }
    Ok(())
}

/// Builds the chat-completion request body exactly as it is sent.
pub fn request_body(profile: &BackendProfile, messages: &[ChatMessage]) -> Value {
    json!({
        "model": profile.model_name,
        "messages": messages,
        "temperature": profile.temperature,
        "max_tokens": profile.max_response_tokens,
    })
}

/// Pulls the assistant text and usage out of a chat-completion response body.
pub fn parse_response_body(body: &Value) -> Result<(String, TokenUsage), GatewayError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::EmptyResponse("response has no choices".into()))?;
    let message = choice.get("message");
    if let Some(refusal) = message.and_then(|m| m.get("refusal")).and_then(Value::as_str) {
        if !refusal.trim().is_empty() {
            return Err(GatewayError::EmptyResponse(format!("provider refused: {refusal}")));
        }
    }
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(GatewayError::EmptyResponse("response withheld by content filter".into()));
    }
    let content = message.and_then(|m| m.get("content")).and_then(Value::as_str).unwrap_or_default();
    if content.trim().is_empty() {
        return Err(GatewayError::EmptyResponse("assistant message is empty".into()));
    }
    let usage = body.get("usage");
    let count = |key: &str| usage.and_then(|u| u.get(key)).and_then(Value::as_u64).unwrap_or(0);
    Ok((content.to_string(), TokenUsage::new(count("prompt_tokens"), count("completion_tokens"))))
}

pub struct ChatGateway {
    profile: BackendProfile,
    transport: Arc<dyn Transport>,
    replay: Option<ReplayCassette>,
    recorder: Option<CassetteWriter>,
    next_seq: u64,
}

impl std::fmt::Debug for ChatGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatGateway")
            .field("profile", &self.profile)
            .field("next_seq", &self.next_seq)
            .finish_non_exhaustive()
    }
}

impl ChatGateway {
    /// Gateway over the real HTTP transport.
    pub fn from_profile(profile: BackendProfile) -> Result<Self, GatewayError> {
        let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new()?);
        Self::new(profile, transport)
    }

    pub fn new(profile: BackendProfile, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        profile.validate()?;
        let (replay, recorder) = match (profile.mode, profile.cassette_path.as_ref()) {
            (GatewayMode::Replay, Some(path)) => (Some(ReplayCassette::open(path)?), None),
            (GatewayMode::Record, Some(path)) => (None, Some(CassetteWriter::open(path)?)),
            _ => (None, None),
        };
        Ok(Self { profile, transport, replay, recorder, next_seq: 1 })
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    /// Fast-forwards sequence numbers (and replay consumption) past exchanges
    /// already in a session ledger, so a reloaded session continues where it
    /// stopped.
    pub fn resume(&mut self, ledger: &[ChatExchange]) -> Result<(), GatewayError> {
        for exchange in ledger {
            if let Some(replay) = self.replay.as_mut() {
                replay.take(&exchange.request_hash)?;
            }
            self.next_seq = self.next_seq.max(exchange.sequence_no + 1);
        }
        Ok(())
    }

    pub fn complete(&mut self, messages: &[ChatMessage]) -> Result<ChatExchange, GatewayError> {
        validate_transcript(messages)?;
        let hash = request_hash(messages);
        let (content, usage) = match self.profile.mode {
            GatewayMode::Replay => {
                let replay =
                    self.replay.as_mut().ok_or_else(|| GatewayError::Config("replay cassette not loaded".into()))?;
                let entry = replay.take(&hash)?;
                let (content, _) = parse_response_body(&entry.response)?;
                (content, entry.usage)
            }
            GatewayMode::Live | GatewayMode::Record => {
                let body = request_body(&self.profile, messages);
                let response = self.send_with_retry(&body)?;
                let (content, usage) = parse_response_body(&response)?;
                if let Some(recorder) = self.recorder.as_mut() {
                    recorder.append(&CassetteEntry { request_hash: hash.clone(), request: body, response, usage })?;
                }
                (content, usage)
            }
        };
        let exchange = ChatExchange {
            request: messages.to_vec(),
            response: ChatMessage::assistant(content),
            usage,
            backend: self.profile.model_name.clone(),
            sequence_no: self.next_seq,
            request_hash: hash,
        };
        self.next_seq += 1;
        Ok(exchange)
    }

    fn send_with_retry(&self, body: &Value) -> Result<Value, GatewayError> {
        let token = std::env::var(&self.profile.api_key_env).ok();
        let policy = &self.profile.retry_policy;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts {
            match self.transport.post(&self.profile.endpoint, token.as_deref(), body) {
                Ok(value) => return Ok(value),
                Err(failure) => {
                    tracing::warn!(attempt, error = %failure, "chat completion attempt failed");
                    let retryable = failure.is_retryable();
                    last = failure.to_string();
                    if !retryable {
                        return Err(GatewayError::Transport { attempts: attempt, last });
                    }
                    if attempt < policy.max_attempts && policy.backoff_ms > 0 {
                        std::thread::sleep(Duration::from_millis(policy.backoff_ms));
                    }
                }
            }
        }
        Err(GatewayError::Transport { attempts: policy.max_attempts, last })
    }
}
