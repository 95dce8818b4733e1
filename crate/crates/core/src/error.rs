use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate vector{}: L2 norm below 1e-12", fmt_id(.id))]
    DegenerateVector { id: Option<String> },

    #[error("non-finite component at index {index}{}", fmt_id(.id))]
    NonFinite { id: Option<String>, index: usize },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NormViolation { row: usize, norm: f64 },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("bad magic in {path}: expected \"PWVEC001\"")]
    BadMagic { path: PathBuf },

    #[error("truncated vector file {path}: header implies {expected} bytes, found {actual}")]
    TruncatedFile { path: PathBuf, expected: u64, actual: u64 },

    #[error("manifest rows are not a permutation of 0..{count}: {detail}")]
    ManifestGap { count: usize, detail: String },

    #[error("{}:{line}: {message}", .path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("no vector supplied for id {0:?}")]
    MissingVector(String),

    #[error("more than one vector supplied for id {0:?}")]
    DuplicateVector(String),

    #[error("vector supplied for id {0:?} which is not in the manifest")]
    OrphanVector(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid relevance: {observed} relevant items observed but total_relevant is {total}")]
    InvalidRelevance { observed: usize, total: usize },

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("query set is empty")]
    EmptyQuerySet,

    #[error("query id {0:?} is not present in the gallery")]
    UnknownQueryId(String),

    #[error("query {index}: {source}")]
    BatchQuery {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attach a record id to vector-level errors raised before the id was known.
    pub fn with_id(self, id: &str) -> Self {
        match self {
            Error::DegenerateVector { id: None } => Error::DegenerateVector { id: Some(id.to_owned()) },
            Error::NonFinite { id: None, index } => Error::NonFinite { id: Some(id.to_owned()), index },
            other => other,
        }
    }

    /// True for failures of the environment rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

fn fmt_id(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" for id {id:?}"),
        None => String::new(),
    }
}
