//! Exact cosine retrieval over precomputed embedding galleries.
//!
//! Images and texts are embedded elsewhere into one shared latent space. This
//! crate stores those vectors ([`store`]), ranks them against a query by an
//! exhaustive cosine scan ([`index`]), folds ranked hits into per-class
//! candidate suggestions ([`model::aggregate_candidates`]) and measures
//! retrieval quality with Top-k accuracy and mAP ([`eval`]).

pub mod error;
pub mod eval;
pub mod index;
pub mod model;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{average_precision, evaluate, top_k_hit, EvalConfig, EvalQuery, EvalReport, Protocol};
pub use index::{build_snapshot, search, search_batch, search_rows, IndexSnapshot, QuerySpec, ScoredRow};
pub use model::{
    aggregate_candidates, cosine_similarity, normalize, CandidateDisease, Embedding, GalleryRecord, Modality,
    RankedHit, NORM_TOLERANCE,
};
pub use store::{ingest_raw, load_gallery, write_gallery, IngestReport};
