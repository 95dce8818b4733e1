//! A deterministic embedder speaking the sidecar protocol, for tests and
//! local runs without model weights.
//!
//! The vector for a payload is drawn from ChaCha8 seeded with the FNV-1a hash
//! of the payload bytes, then normalized. Identical input gives an identical
//! vector.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::embedder::{EmbedRequest, EmbedResponse};

/// How the stub misbehaves, if at all.
#[derive(Debug, Clone, PartialEq)]
pub enum StubBehavior {
    Normal,
    /// Answer with the right direction but this L2 norm.
    Scaled(f32),
    /// Advertise and return vectors of this dimension instead.
    WrongDim(usize),
    /// Always answer 500.
    ServerError,
    /// Sleep before answering.
    Delay(Duration),
    /// Answer with a fixed vector regardless of input.
    Fixed(Vec<f32>),
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// The unit vector the stub returns for `payload`.
pub fn stub_vector(payload: &[u8], dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(payload));
    loop {
        let raw: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if let Ok(v) = snapdiag_core::normalize(&raw, dim) {
            return v.into_vec();
        }
    }
}

struct Stub {
    dim: usize,
    behavior: StubBehavior,
}

impl Stub {
    async fn answer(&self, payload: &[u8]) -> Response {
        let mut vector = match &self.behavior {
            StubBehavior::Fixed(v) => v.clone(),
            StubBehavior::WrongDim(d) => stub_vector(payload, *d),
            _ => stub_vector(payload, self.dim),
        };
        match &self.behavior {
            StubBehavior::Normal | StubBehavior::Fixed(_) | StubBehavior::WrongDim(_) => {}
            StubBehavior::Scaled(norm) => vector.iter_mut().for_each(|x| *x *= norm),
            StubBehavior::ServerError => {
                return (StatusCode::INTERNAL_SERVER_ERROR, "stub failure").into_response();
            }
            StubBehavior::Delay(d) => tokio::time::sleep(*d).await,
        }
        Json(EmbedResponse { dim: vector.len(), vector, model: "stub".into() }).into_response()
    }
}

async fn embed_text(State(stub): State<Arc<Stub>>, Json(body): Json<EmbedRequest>) -> Response {
    if body.text.trim().is_empty() {
        return (StatusCode::BAD_REQUEST, "empty text").into_response();
    }
    stub.answer(body.text.as_bytes()).await
}

async fn embed_image(State(stub): State<Arc<Stub>>, mut multipart: Multipart) -> Response {
    while let Ok(Some(field)) = multipart.next_field().await {
        if field.name() != Some("file") {
            continue;
        }
        let Ok(bytes) = field.bytes().await else {
            return (StatusCode::BAD_REQUEST, "unreadable file part").into_response();
        };
        let decodable = bytes.starts_with(&[0xff, 0xd8, 0xff]) || bytes.starts_with(b"\x89PNG\r\n\x1a\n");
        if !decodable {
            return (StatusCode::UNSUPPORTED_MEDIA_TYPE, "not a JPEG or PNG").into_response();
        }
        return stub.answer(&bytes).await;
    }
    (StatusCode::BAD_REQUEST, "missing file part").into_response()
}

pub fn stub_router(dim: usize, behavior: StubBehavior) -> Router {
    Router::new()
        .route("/embed/text", post(embed_text))
        .route("/embed/image", post(embed_image))
        .route("/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .with_state(Arc::new(Stub { dim, behavior }))
}

/// Binds the stub on an ephemeral localhost port.
pub async fn spawn_stub(dim: usize, behavior: StubBehavior) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = stub_router(dim, behavior);
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((addr, handle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_vectors_are_deterministic_unit() {
        let a = stub_vector(b"yellow spots on leaves", 512);
        let b = stub_vector(b"yellow spots on leaves", 512);
        let c = stub_vector(b"wilting flowers", 512);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let norm: f64 = a.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}
