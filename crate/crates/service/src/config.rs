use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use snapdiag_core::{IndexSnapshot, Modality};

/// Prefix of environment variables that override file settings.
pub const ENV_PREFIX: &str = "SNAPDIAG_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Which gallery records a query may return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultModality {
    /// Images only when the gallery holds any images, otherwise everything.
    #[default]
    Auto,
    Image,
    Text,
    Any,
}

impl ResultModality {
    pub fn resolve(self, snapshot: &IndexSnapshot) -> Option<Modality> {
        match self {
            ResultModality::Auto => snapshot
                .records()
                .iter()
                .any(|r| r.modality == Modality::Image)
                .then_some(Modality::Image),
            ResultModality::Image => Some(Modality::Image),
            ResultModality::Text => Some(Modality::Text),
            ResultModality::Any => None,
        }
    }
}

impl std::str::FromStr for ResultModality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "image" => Ok(Self::Image),
            "text" => Ok(Self::Text),
            "any" => Ok(Self::Any),
            other => Err(format!("expected auto, image, text or any; got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub gallery_dir: PathBuf,
    pub listen_address: String,
    pub default_k: usize,
    pub max_k: usize,
    pub embedder_url: Option<String>,
    pub request_timeout_secs: f64,
    pub max_upload_bytes: usize,
    pub result_modality: ResultModality,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            gallery_dir: PathBuf::from("gallery"),
            listen_address: "127.0.0.1:8080".into(),
            default_k: 10,
            max_k: 100,
            embedder_url: None,
            request_timeout_secs: 10.0,
            max_upload_bytes: 10 * 1024 * 1024,
            result_modality: ResultModality::Auto,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Applies `SNAPDIAG_*` overrides, e.g. `SNAPDIAG_MAX_K=50`.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (key, value) in vars {
            let Some(name) = key.as_ref().strip_prefix(ENV_PREFIX) else { continue };
            let value = value.as_ref();
            let bad = |message: String| ConfigError::Env { var: key.as_ref().to_owned(), message };
            match name {
                "GALLERY_DIR" => self.gallery_dir = value.into(),
                "LISTEN_ADDRESS" => self.listen_address = value.into(),
                "DEFAULT_K" => self.default_k = value.parse().map_err(|e| bad(format!("{e}")))?,
                "MAX_K" => self.max_k = value.parse().map_err(|e| bad(format!("{e}")))?,
                "EMBEDDER_URL" => self.embedder_url = (!value.is_empty()).then(|| value.to_owned()),
                "REQUEST_TIMEOUT_SECS" => self.request_timeout_secs = value.parse().map_err(|e| bad(format!("{e}")))?,
                "MAX_UPLOAD_BYTES" => self.max_upload_bytes = value.parse().map_err(|e| bad(format!("{e}")))?,
                "RESULT_MODALITY" => self.result_modality = value.parse().map_err(bad)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.default_k == 0 || self.default_k > self.max_k {
            return Err(ConfigError::Invalid(format!(
                "need 1 <= default_k <= max_k, got default_k {} and max_k {}",
                self.default_k, self.max_k
            )));
        }
        if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
            return Err(ConfigError::Invalid("request_timeout_secs must be positive".into()));
        }
        if self.max_upload_bytes == 0 {
            return Err(ConfigError::Invalid("max_upload_bytes must be positive".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }
}
