//! HTTP retrieval service over a loaded embedding gallery.
//!
//! Raw text and images are turned into vectors by an external embedder (see
//! [`embedder`]); the service itself only ranks vectors against the gallery.

pub mod api;
pub mod config;
pub mod embedder;
pub mod server;
pub mod stub;

pub use config::{ResultModality, ServiceConfig};
pub use embedder::{EmbedError, EmbedPayload, EmbedderClient};
pub use server::{router, serve, AppState, ServeError};
