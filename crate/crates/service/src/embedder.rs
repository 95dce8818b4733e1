//! Client for the embedding sidecar.
//!
//! Protocol: `POST {base}/embed/text` with `{"text": ...}`, or
//! `POST {base}/embed/image` with a multipart `file` part. Both answer
//! `{"vector": [...], "dim": D, "model": "..."}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use snapdiag_core::Embedding;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    /// Connection refused, timeout, or a 5xx from the embedder.
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    /// The embedder answered, but not with a usable vector.
    #[error("embedder protocol error: {0}")]
    Protocol(String),
    /// The embedder refused the payload itself.
    #[error("embedder rejected input ({status}): {message}")]
    Rejected { status: u16, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedKind {
    Text,
    Image,
}

pub enum EmbedPayload<'a> {
    Text(&'a str),
    Image { bytes: Vec<u8>, content_type: &'a str, file_name: &'a str },
}

impl EmbedPayload<'_> {
    pub fn kind(&self) -> EmbedKind {
        match self {
            EmbedPayload::Text(_) => EmbedKind::Text,
            EmbedPayload::Image { .. } => EmbedKind::Image,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
    pub dim: usize,
    pub model: String,
}

#[derive(Debug, Clone)]
pub struct EmbedderClient {
    base: String,
    http: reqwest::Client,
}

impl EmbedderClient {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, EmbedError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        Ok(Self { base: base_url.trim_end_matches('/').to_owned(), http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Embeds `payload` and returns a unit vector of length `dim`.
    pub async fn embed(&self, payload: EmbedPayload<'_>, dim: usize) -> Result<Embedding, EmbedError> {
        let request = match payload {
            EmbedPayload::Text(text) => {
                self.http.post(format!("{}/embed/text", self.base)).json(&EmbedRequest { text: text.to_owned() })
            }
            EmbedPayload::Image { bytes, content_type, file_name } => {
                let part = reqwest::multipart::Part::bytes(bytes)
                    .file_name(file_name.to_owned())
                    .mime_str(content_type)
                    .map_err(|e| EmbedError::Protocol(e.to_string()))?;
                self.http
                    .post(format!("{}/embed/image", self.base))
                    .multipart(reqwest::multipart::Form::new().part("file", part))
            }
        };

        let response = request.send().await.map_err(|e| EmbedError::Unavailable(describe(&e)))?;
        let status = response.status();
        if status.is_server_error() {
            return Err(EmbedError::Unavailable(format!("embedder returned {status}")));
        }
        if !status.is_success() {
            let message = response.text().await.unwrap_or_default();
            return Err(EmbedError::Rejected { status: status.as_u16(), message });
        }
        let body: EmbedResponse = response
            .json()
            .await
            .map_err(|e| if e.is_timeout() { EmbedError::Unavailable(describe(&e)) } else { EmbedError::Protocol(e.to_string()) })?;
        validate_response(body, dim)
    }
}

fn describe(e: &reqwest::Error) -> String {
    if e.is_timeout() {
        format!("timed out: {e}")
    } else {
        e.to_string()
    }
}

/// Checks the advertised and actual dimensions and re-normalizes.
pub fn validate_response(body: EmbedResponse, dim: usize) -> Result<Embedding, EmbedError> {
    if body.vector.len() != body.dim {
        return Err(EmbedError::Protocol(format!(
            "response declares dim {} but carries {} components",
            body.dim,
            body.vector.len()
        )));
    }
    if body.dim != dim {
        return Err(EmbedError::Protocol(format!("embedder dim {} does not match gallery dim {dim}", body.dim)));
    }
    Embedding::normalize(&body.vector, dim).map_err(|e| EmbedError::Protocol(format!("model {:?}: {e}", body.model)))
}
