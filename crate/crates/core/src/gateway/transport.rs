use std::time::Duration;

use serde_json::Value;

use super::GatewayError;

#[derive(Debug, thiserror::Error)]
pub enum TransportFailure {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("undecodable response body: {0}")]
    Decode(String),
}

impl TransportFailure {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportFailure::Connection(_) => true,
            TransportFailure::Status { status, .. } => *status == 429 || *status >= 500,
            TransportFailure::Decode(_) => false,
        }
    }
}

/// Sends one JSON body and returns the decoded JSON reply.
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportFailure>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportFailure> {
        let mut request = self.client.post(endpoint).json(body);
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| TransportFailure::Connection(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| TransportFailure::Connection(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportFailure::Status { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| TransportFailure::Decode(e.to_string()))
    }
}
