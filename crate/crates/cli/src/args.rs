use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use snapdiag_core::Modality;
use snapdiag_service::ResultModality;

#[derive(Debug, Parser)]
#[command(name = "snapdiag", version, about = "Cross-modal plant disease retrieval over precomputed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize raw embeddings and write them as a gallery.
    Ingest(IngestArgs),
    /// Load a gallery, check every invariant and print a summary.
    Validate(ValidateArgs),
    /// Run the HTTP retrieval service.
    Serve(ServeArgs),
    /// Rank a gallery against one vector, text or image query.
    Query(QueryArgs),
    /// Compute Top-k accuracy and mAP.
    Evaluate(EvaluateArgs),
    /// Generate a seeded synthetic gallery.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSONL with one {"id", "class", "modality", "uri", "caption"} object per line.
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSONL with one {"id", "vector"} object per line.
    #[arg(long)]
    pub raw: PathBuf,
    /// Output gallery directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub gallery: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML file with service settings. SNAPDIAG_* variables override it; flags override both.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// host:port to listen on.
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub default_k: Option<usize>,
    #[arg(long)]
    pub max_k: Option<usize>,
    /// Base URL of the embedding sidecar.
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long)]
    pub request_timeout_secs: Option<f64>,
    #[arg(long)]
    pub max_upload_bytes: Option<usize>,
    /// Which records queries may return: auto, image, text or any.
    #[arg(long)]
    pub result_modality: Option<ResultModality>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["vector", "text", "image"])))]
pub struct QueryArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    /// JSON file holding the query vector as an array (or {"vector": [...]}).
    #[arg(long)]
    pub vector: Option<PathBuf>,
    /// Symptom description; needs --embedder.
    #[arg(long)]
    pub text: Option<String>,
    /// JPEG or PNG photo; needs --embedder.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long, short, default_value_t = 10)]
    pub k: usize,
    /// Restrict results to these classes (repeatable).
    #[arg(long = "class")]
    pub classes: Vec<String>,
    #[arg(long, default_value = "auto")]
    pub result_modality: ResultModality,
    #[arg(long, default_value_t = 10.0)]
    pub timeout_secs: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    /// Separate query gallery. Without it every gallery item queries the rest (leave-one-out).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Cutoffs for Top-k accuracy, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// Truncate the ranking used for AP at this depth.
    #[arg(long)]
    pub ap_cutoff: Option<usize>,
    /// Only rank gallery records of this modality.
    #[arg(long)]
    pub modality: Option<Modality>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the printed table.
    #[arg(long, default_value = "snapdiag")]
    pub method: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 89, value_parser = clap::value_parser!(u32).range(1..))]
    pub classes: u32,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub per_class: u32,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..))]
    pub dim: u32,
    /// Per-component standard deviation of item noise around the class mean.
    #[arg(long, default_value_t = 0.05, value_parser = parse_noise)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_noise(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err("noise must be a finite number >= 0".into())
    }
}
