//! Scoring backends: an HTTP chat-completion client and a replay-only
//! client that never touches the network.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// Decoding parameters sent to the scoring backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringDecoding {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for ScoringDecoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request failed: {0}")]
    Request(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode backend response: {0}")]
    Decode(String),
    #[error("replay cache has no entry for this prompt")]
    ReplayMiss,
}

impl TransportError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Request(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Decode(_) | TransportError::ReplayMiss => false,
        }
    }
}

/// Abstract scoring backend.
pub trait SimulatorClient: Send + Sync {
    /// Backend id, part of every cache key.
    fn identity(&self) -> String;

    fn complete(&self, prompt: &str, decoding: &ScoringDecoding) -> Result<String, TransportError>;

    /// Number of network requests issued so far.
    fn request_count(&self) -> u64 {
        0
    }
}

/// OpenAI-style `/chat/completions` client.
pub struct HttpChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    requests: AtomicU64,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            http,
            requests: AtomicU64::new(0),
        })
    }

    pub fn request_body(&self, prompt: &str, decoding: &ScoringDecoding) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
            "seed": decoding.seed,
        })
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response.
pub fn extract_completion_text(body: &serde_json::Value) -> Result<String, TransportError> {
    body.get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| TransportError::Decode("missing choices[0].message.content".into()))
}

impl SimulatorClient for HttpChatClient {
    fn identity(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, prompt: &str, decoding: &ScoringDecoding) -> Result<String, TransportError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.http.post(&self.endpoint).json(&self.request_body(prompt, decoding));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Request(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportError::Request(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let body: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| TransportError::Decode(e.to_string()))?;
        extract_completion_text(&body)
    }

    fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}

/// Serves only what the replay cache already holds; every completion request
/// is a miss. Pair it with a [`super::ResponseCache`] loaded from recordings.
pub struct ReplayClient {
    backend_id: String,
}

impl ReplayClient {
    pub fn new(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
        }
    }
}

impl SimulatorClient for ReplayClient {
    fn identity(&self) -> String {
        self.backend_id.clone()
    }

    fn complete(&self, _prompt: &str, _decoding: &ScoringDecoding) -> Result<String, TransportError> {
        Err(TransportError::ReplayMiss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_first_choice() {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": "Satisfaction score: 4"}}]});
        assert_eq!(extract_completion_text(&body).unwrap(), "Satisfaction score: 4");
        assert!(extract_completion_text(&json!({"choices": []})).is_err());
    }

    #[test]
    fn request_shape() {
        let c = HttpChatClient::new("http://localhost:1/v1/chat/completions", "gpt-x", None).unwrap();
        let body = c.request_body("hello", &ScoringDecoding::default());
        assert_eq!(body["model"], "gpt-x");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 256);
    }

    #[test]
    fn retryability() {
        assert!(TransportError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(TransportError::Status { status: 429, body: String::new() }.is_retryable());
        assert!(!TransportError::Status { status: 401, body: String::new() }.is_retryable());
        assert!(!TransportError::ReplayMiss.is_retryable());
    }
}
