//! JSON shapes of the HTTP API.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use snapdiag_core::{CandidateDisease, IndexSnapshot, RankedHit};

use crate::embedder::EmbedError;

#[derive(Debug, Clone, Deserialize)]
pub struct VectorQuery {
    pub vector: Vec<f32>,
    pub k: Option<usize>,
    pub class_filter: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TextQuery {
    pub text: String,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub id: String,
    pub class: String,
    pub score: f64,
    pub uri: String,
    pub rank: usize,
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub embed_ms: Option<f64>,
    pub search_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<ResultItem>,
    pub candidates: Vec<CandidateDisease>,
    pub timing: Timing,
    pub gallery_count: usize,
}

/// Scores leave the service rounded to 4 decimals.
pub fn round_score(score: f64) -> f64 {
    (score * 1e4).round() / 1e4
}

impl QueryResponse {
    pub fn build(snapshot: &IndexSnapshot, hits: &[RankedHit], timing: Timing) -> Self {
        let candidates = snapdiag_core::aggregate_candidates(hits)
            .into_iter()
            .map(|c| CandidateDisease { score: round_score(c.score), ..c })
            .collect();
        let results = hits
            .iter()
            .map(|h| {
                let record = snapshot.record(h.row);
                ResultItem {
                    id: h.record_id.clone(),
                    class: h.class_label.clone(),
                    score: round_score(h.score),
                    uri: record.uri.clone(),
                    rank: h.rank,
                    caption: record.caption.clone(),
                }
            })
            .collect();
        Self { results, candidates, timing, gallery_count: snapshot.count() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub gallery_size: usize,
    pub dim: usize,
    pub default_k: usize,
    pub max_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classes {
    pub classes: Vec<ClassCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    pub retriable: bool,
}

/// An error answered as `{"error", "message", "retriable"}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub retriable: bool,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), retriable: false }
    }

    pub fn retriable(mut self) -> Self {
        self.retriable = true;
        self
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn dimension_mismatch(expected: usize, actual: usize) -> Self {
        Self::bad_request(
            "DimensionMismatch",
            format!("query vector has dimension {actual}, gallery expects {expected}"),
        )
    }

    pub fn k_too_large(k: usize, max_k: usize) -> Self {
        Self::bad_request("KTooLarge", format!("k = {k} exceeds max_k = {max_k}"))
    }

    pub fn unsupported_media(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "UnsupportedMediaType", message)
    }

    pub fn payload_too_large(limit: usize) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", format!("upload exceeds {limit} bytes"))
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }

    pub fn embedder_not_configured() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "EmbedderUnavailable", "no embedder_url is configured")
    }
}

impl From<EmbedError> for ApiError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Unavailable(m) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "EmbedderUnavailable", m).retriable()
            }
            EmbedError::Protocol(m) => Self::new(StatusCode::BAD_GATEWAY, "EmbedderProtocolError", m),
            EmbedError::Rejected { status: 415, message } => Self::unsupported_media(message),
            e @ EmbedError::Rejected { .. } => Self::new(StatusCode::BAD_GATEWAY, "EmbedderProtocolError", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.code.to_owned(), message: self.message, retriable: self.retriable };
        (self.status, Json(body)).into_response()
    }
}
