use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use snapdiag_core::store::{write_snapshot, IngestReport};
use snapdiag_core::synth::{generate, SynthParams};
use snapdiag_core::{
    aggregate_candidates, evaluate as run_evaluation, ingest_raw, load_gallery, search, Embedding, EvalConfig,
    EvalQuery, Protocol, QuerySpec,
};
use snapdiag_service::{EmbedPayload, EmbedderClient, ServeError, ServiceConfig};

use crate::args::{EvaluateArgs, IngestArgs, QueryArgs, ServeArgs, SynthArgs, ValidateArgs};
use crate::Failure;

type CmdResult = Result<(), Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Io(format!("starting async runtime: {e}")))
}

pub fn ingest(args: IngestArgs) -> CmdResult {
    let report = ingest_raw(&args.manifest, &args.raw, &args.out)?;
    print!("{report}");
    Ok(())
}

pub fn validate(args: ValidateArgs) -> CmdResult {
    let snapshot = load_gallery(&args.gallery)?;
    print!("{}", IngestReport::from_snapshot(&snapshot));
    Ok(())
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let params = SynthParams {
        classes: args.classes as usize,
        per_class: args.per_class as usize,
        dim: args.dim as usize,
        noise: args.noise,
        seed: args.seed,
    };
    let snapshot = generate(&params).map_err(|e| Failure::Usage(e.to_string()))?;
    write_snapshot(&snapshot, &args.out)?;
    print!("{}", IngestReport::from_snapshot(&snapshot));
    Ok(())
}

fn service_config(args: &ServeArgs) -> Result<ServiceConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => ServiceConfig::from_file(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => ServiceConfig::default(),
    };
    config.apply_env(std::env::vars()).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(v) = &args.gallery {
        config.gallery_dir = v.clone();
    }
    if let Some(v) = &args.listen {
        config.listen_address = v.clone();
    }
    if let Some(v) = args.default_k {
        config.default_k = v;
    }
    if let Some(v) = args.max_k {
        config.max_k = v;
    }
    if let Some(v) = &args.embedder {
        config.embedder_url = Some(v.clone());
    }
    if let Some(v) = args.request_timeout_secs {
        config.request_timeout_secs = v;
    }
    if let Some(v) = args.max_upload_bytes {
        config.max_upload_bytes = v;
    }
    if let Some(v) = args.result_modality {
        config.result_modality = v;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

pub fn serve(args: ServeArgs) -> CmdResult {
    let config = service_config(&args)?;
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    runtime()?.block_on(snapdiag_service::serve(config)).map_err(|e| match e {
        ServeError::Gallery { ref source, .. } if !source.is_io() => Failure::Data(e.to_string()),
        ServeError::Config(_) => Failure::Usage(e.to_string()),
        _ => Failure::Io(e.to_string()),
    })
}

fn read_vector_file(path: &Path) -> Result<Vec<f32>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let array = match value {
        serde_json::Value::Object(mut map) => map.remove("vector").unwrap_or(serde_json::Value::Null),
        other => other,
    };
    serde_json::from_value(array)
        .map_err(|_| Failure::Data(format!("{}: expected a JSON array of numbers", path.display())))
}

fn image_content_type(path: &Path, bytes: &[u8]) -> Result<&'static str, Failure> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("jpg" | "jpeg") => Ok("image/jpeg"),
        Some("png") => Ok("image/png"),
        _ if bytes.starts_with(&[0xff, 0xd8, 0xff]) => Ok("image/jpeg"),
        _ if bytes.starts_with(b"\x89PNG\r\n\x1a\n") => Ok("image/png"),
        _ => Err(Failure::Data(format!("{}: not a JPEG or PNG image", path.display()))),
    }
}

pub fn query(args: QueryArgs) -> CmdResult {
    let needs_embedder = args.text.is_some() || args.image.is_some();
    if needs_embedder && args.embedder.is_none() {
        return Err(Failure::Usage("--text and --image require --embedder URL".into()));
    }
    if !(args.timeout_secs > 0.0 && args.timeout_secs.is_finite()) {
        return Err(Failure::Usage("--timeout-secs must be positive".into()));
    }
    let snapshot = load_gallery(&args.gallery)?;
    let dim = snapshot.dim();

    let vector = if let Some(path) = &args.vector {
        Embedding::normalize(&read_vector_file(path)?, dim)?
    } else {
        let client = EmbedderClient::new(args.embedder.as_deref().unwrap(), Duration::from_secs_f64(args.timeout_secs))
            .map_err(|e| Failure::Io(e.to_string()))?;
        let image;
        let payload = if let Some(text) = &args.text {
            let text = text.trim();
            if text.is_empty() {
                return Err(Failure::Usage("--text is empty".into()));
            }
            EmbedPayload::Text(text)
        } else {
            let path = args.image.as_ref().unwrap();
            let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
            let content_type = image_content_type(path, &bytes)?;
            image = path.file_name().and_then(|n| n.to_str()).unwrap_or("upload").to_owned();
            EmbedPayload::Image { bytes, content_type, file_name: &image }
        };
        runtime()?
            .block_on(client.embed(payload, dim))
            .map_err(|e| Failure::Data(e.to_string()))?
    };

    let mut spec = QuerySpec::new(vector, args.k).with_modality(args.result_modality.resolve(&snapshot));
    if !args.classes.is_empty() {
        spec = spec.with_classes(args.classes.iter().cloned());
    }
    let hits = search(&snapshot, &spec)?;

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "rank\tscore\tclass\tid");
    for h in &hits {
        let _ = writeln!(out, "{}\t{:.4}\t{}\t{}", h.rank, h.score, h.class_label, h.record_id);
    }
    let _ = writeln!(out, "\ncandidate\tscore\tsupport");
    for c in aggregate_candidates(&hits) {
        let _ = writeln!(out, "{}\t{:.4}\t{}", c.class_label, c.score, c.support);
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let config = EvalConfig {
        k_values: args.k.clone(),
        protocol: if args.queries.is_some() { Protocol::HeldOut } else { Protocol::LeaveOneOut },
        ap_cutoff: args.ap_cutoff,
        modality_filter: args.modality,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let gallery = load_gallery(&args.gallery)?;
    let queries = match &args.queries {
        Some(dir) => EvalQuery::from_snapshot(&load_gallery(dir)?),
        None => EvalQuery::from_snapshot(&gallery),
    };
    let report = run_evaluation(&gallery, &queries, &config)?;

    print!("{}", report.table(&args.method));
    println!(
        "queries {}  skipped {}  gallery {}  protocol {}",
        report.query_count, report.skipped_queries, report.gallery_count, report.protocol
    );
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(path, json + "\n").map_err(|e| io_failure(path, e))?;
    }
    Ok(())
}
