use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use arc_swap::ArcSwap;
use axum::body::Body;
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use snapdiag_core::{load_gallery, search, Embedding, IndexSnapshot, QuerySpec};
use tokio::net::TcpListener;

use crate::api::{ApiError, ClassCount, Classes, Health, QueryResponse, TextQuery, Timing, VectorQuery};
use crate::config::{ConfigError, ServiceConfig};
use crate::embedder::{EmbedError, EmbedPayload, EmbedderClient};

/// Slack on top of `max_upload_bytes` for multipart framing and small fields.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading gallery {}: {source}", .dir.display())]
    Gallery { dir: PathBuf, source: snapdiag_core::Error },
    #[error("binding {address}: {source}")]
    Bind { address: String, source: std::io::Error },
    #[error(transparent)]
    Embedder(#[from] EmbedError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Shared by every handler. The snapshot is replaced wholesale on reload;
/// a request keeps whichever snapshot it loaded first.
pub struct AppState {
    config: ServiceConfig,
    snapshot: ArcSwap<IndexSnapshot>,
    embedder: Option<EmbedderClient>,
}

impl AppState {
    pub fn new(config: ServiceConfig, snapshot: IndexSnapshot) -> Result<Arc<Self>, ServeError> {
        config.validate()?;
        let embedder = config
            .embedder_url
            .as_deref()
            .map(|url| EmbedderClient::new(url, config.request_timeout()))
            .transpose()?;
        Ok(Arc::new(Self { config, snapshot: ArcSwap::from_pointee(snapshot), embedder }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<IndexSnapshot> {
        self.snapshot.load_full()
    }

    /// Loads the gallery directory again and publishes it. On failure the
    /// current snapshot stays in place.
    pub async fn reload(&self) -> Result<Arc<IndexSnapshot>, snapdiag_core::Error> {
        let dir = self.config.gallery_dir.clone();
        let fresh = tokio::task::spawn_blocking(move || load_gallery(&dir))
            .await
            .expect("gallery loader panicked")?;
        let fresh = Arc::new(fresh);
        self.snapshot.store(fresh.clone());
        Ok(fresh)
    }

    fn resolve_k(&self, k: Option<usize>) -> Result<usize, ApiError> {
        let k = k.unwrap_or(self.config.default_k);
        if k > self.config.max_k {
            return Err(ApiError::k_too_large(k, self.config.max_k));
        }
        Ok(k)
    }

    fn run_query(
        &self,
        snapshot: &IndexSnapshot,
        vector: Embedding,
        k: usize,
        class_filter: Option<Vec<String>>,
        embed_ms: Option<f64>,
    ) -> Result<QueryResponse, ApiError> {
        let started = Instant::now();
        let mut spec = QuerySpec::new(vector, k).with_modality(self.config.result_modality.resolve(snapshot));
        if let Some(classes) = class_filter {
            spec = spec.with_classes(classes);
        }
        let hits = search(snapshot, &spec).map_err(core_error)?;
        let search_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(QueryResponse::build(snapshot, &hits, Timing { embed_ms, search_ms }))
    }

    async fn embed_and_query(&self, payload: EmbedPayload<'_>, k: usize) -> Result<QueryResponse, ApiError> {
        let embedder = self.embedder.as_ref().ok_or_else(ApiError::embedder_not_configured)?;
        let snapshot = self.snapshot();
        let kind = payload.kind();
        let started = Instant::now();
        let vector = embedder.embed(payload, snapshot.dim()).await.map_err(|e| {
            tracing::warn!(?kind, error = %e, "embedding failed");
            ApiError::from(e)
        })?;
        let embed_ms = started.elapsed().as_secs_f64() * 1e3;
        self.run_query(&snapshot, vector, k, None, Some(embed_ms))
    }
}

fn core_error(e: snapdiag_core::Error) -> ApiError {
    use snapdiag_core::Error as E;
    match e {
        E::DimensionMismatch { expected, actual } => ApiError::dimension_mismatch(expected, actual),
        E::DegenerateVector { .. } => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "DegenerateVector", "query vector has zero norm")
        }
        E::NonFinite { index, .. } => ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "NonFiniteVector",
            format!("component {index} is not finite"),
        ),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", other.to_string()),
    }
}

fn json_rejection(rejection: JsonRejection) -> ApiError {
    let code = if rejection.status() == StatusCode::UNSUPPORTED_MEDIA_TYPE { "UnsupportedMediaType" } else { "BadRequest" };
    ApiError::new(rejection.status(), code, rejection.body_text())
}

pub fn router(state: Arc<AppState>) -> Router {
    let upload_limit = state.config.max_upload_bytes.saturating_add(MULTIPART_OVERHEAD);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/classes", get(classes))
        .route("/api/query/vector", post(query_vector))
        .route("/api/query/text", post(query_text))
        .route("/api/query/image", post(query_image).layer(DefaultBodyLimit::max(upload_limit)))
        .route("/api/image/{id}", get(image))
        .route("/api/admin/reload", post(reload))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let snapshot = state.snapshot();
    Json(Health {
        status: "ok".into(),
        gallery_size: snapshot.count(),
        dim: snapshot.dim(),
        default_k: state.config.default_k,
        max_k: state.config.max_k,
    })
}

async fn classes(State(state): State<Arc<AppState>>) -> Json<Classes> {
    let classes = state
        .snapshot()
        .class_counts()
        .into_iter()
        .map(|(label, count)| ClassCount { label, count })
        .collect();
    Json(Classes { classes })
}

async fn query_vector(
    State(state): State<Arc<AppState>>,
    body: Result<Json<VectorQuery>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let Json(body) = body.map_err(json_rejection)?;
    let snapshot = state.snapshot();
    let k = state.resolve_k(body.k)?;
    let vector = Embedding::normalize(&body.vector, snapshot.dim()).map_err(core_error)?;
    state.run_query(&snapshot, vector, k, body.class_filter, None).map(Json)
}

async fn query_text(
    State(state): State<Arc<AppState>>,
    body: Result<Json<TextQuery>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let Json(body) = body.map_err(json_rejection)?;
    let text = body.text.trim();
    if text.is_empty() {
        return Err(ApiError::bad_request("EmptyText", "query text is empty"));
    }
    let k = state.resolve_k(body.k)?;
    state.embed_and_query(EmbedPayload::Text(text), k).await.map(Json)
}

fn is_accepted_image(content_type: &str) -> bool {
    let essence = content_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    essence == "image/jpeg" || essence == "image/png"
}

fn sniff_image_type(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        Some("image/jpeg")
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some("image/png")
    } else {
        None
    }
}

fn multipart_failure(e: axum::extract::multipart::MultipartError, limit: usize) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::payload_too_large(limit)
    } else {
        ApiError::bad_request("BadRequest", e.body_text())
    }
}

async fn query_image(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let limit = state.config.max_upload_bytes;
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    if declared.is_some_and(|n| n > limit.saturating_add(MULTIPART_OVERHEAD)) {
        return Err(ApiError::payload_too_large(limit));
    }
    let mut multipart =
        multipart.map_err(|e| ApiError::unsupported_media(format!("expected multipart/form-data: {}", e.body_text())))?;

    let mut file: Option<(Vec<u8>, String, String)> = None;
    let mut k = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| multipart_failure(e, limit))? {
        match field.name() {
            Some("file") => {
                let declared_type = field.content_type().map(str::to_owned);
                let file_name = field.file_name().unwrap_or("upload").to_owned();
                let bytes = field.bytes().await.map_err(|e| multipart_failure(e, limit))?;
                if bytes.len() > limit {
                    return Err(ApiError::payload_too_large(limit));
                }
                let content_type = match declared_type {
                    Some(t) if is_accepted_image(&t) => t,
                    Some(t) if t != "application/octet-stream" => {
                        return Err(ApiError::unsupported_media(format!("{t} is not image/jpeg or image/png")))
                    }
                    _ => sniff_image_type(&bytes)
                        .ok_or_else(|| ApiError::unsupported_media("upload is neither JPEG nor PNG"))?
                        .to_owned(),
                };
                file = Some((bytes.to_vec(), content_type, file_name));
            }
            Some("k") => {
                let text = field.text().await.map_err(|e| multipart_failure(e, limit))?;
                k = Some(text.trim().parse::<usize>().map_err(|_| ApiError::bad_request("BadRequest", "k must be a non-negative integer"))?);
            }
            _ => {}
        }
    }
    let (bytes, content_type, file_name) =
        file.ok_or_else(|| ApiError::bad_request("BadRequest", "multipart field \"file\" is missing"))?;
    let k = state.resolve_k(k)?;
    let payload = EmbedPayload::Image { bytes, content_type: &content_type, file_name: &file_name };
    state.embed_and_query(payload, k).await.map(Json)
}

fn content_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let snapshot = state.snapshot();
    let record = snapshot.find(&id).ok_or_else(|| ApiError::not_found(format!("no record {id:?}")))?;
    let uri = record.uri.as_str();
    if uri.starts_with("http://") || uri.starts_with("https://") {
        return Ok(Redirect::temporary(uri).into_response());
    }
    let local = uri.strip_prefix("file://").unwrap_or(uri);
    if local.is_empty() || local.contains("://") {
        return Err(ApiError::not_found(format!("record {id:?} has no local asset")));
    }
    let path = state.config.gallery_dir.join(local);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::not_found(format!("asset for {id:?} is not readable")))?;
    Ok(([(header::CONTENT_TYPE, content_type_for(&path))], Body::from(bytes)).into_response())
}

async fn reload(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    match state.reload().await {
        Ok(snapshot) => {
            tracing::info!(count = snapshot.count(), dim = snapshot.dim(), "gallery reloaded");
            Ok(Json(serde_json::json!({
                "status": "reloaded",
                "gallery_size": snapshot.count(),
                "dim": snapshot.dim(),
            })))
        }
        Err(e) => {
            tracing::error!(error = %e, "gallery reload failed; keeping current snapshot");
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "ReloadFailed", e.to_string()))
        }
    }
}

/// Loads the gallery, binds, and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    config.validate()?;
    let dir = config.gallery_dir.clone();
    let snapshot = tokio::task::spawn_blocking(move || load_gallery(&dir))
        .await
        .expect("gallery loader panicked")
        .map_err(|source| ServeError::Gallery { dir: config.gallery_dir.clone(), source })?;
    let listener = TcpListener::bind(&config.listen_address)
        .await
        .map_err(|source| ServeError::Bind { address: config.listen_address.clone(), source })?;
    tracing::info!(
        address = %listener.local_addr()?,
        gallery = %config.gallery_dir.display(),
        count = snapshot.count(),
        dim = snapshot.dim(),
        "serving"
    );
    let app = router(AppState::new(config, snapshot)?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
