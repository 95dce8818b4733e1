use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use snapdiag_service::stub::{spawn_stub, stub_vector, StubBehavior};

fn snapdiag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snapdiag")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(out: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", p(out)];
    args.extend_from_slice(extra);
    let o = snapdiag(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn write_lines(path: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

fn small_ingest_inputs(dir: &Path, second_vector: Value) {
    write_lines(
        &dir.join("manifest.jsonl"),
        &[
            json!({"id": "a", "class": "rust", "uri": "a.jpg"}),
            json!({"id": "b", "class": "rust", "uri": "b.jpg"}),
            json!({"id": "c", "class": "blight", "modality": "text", "caption": "brown lesions"}),
        ],
    );
    write_lines(
        &dir.join("raw.jsonl"),
        &[
            json!({"id": "a", "vector": [3.0, 4.0, 0.0]}),
            json!({"id": "b", "vector": second_vector}),
            json!({"id": "c", "vector": [0.0, 0.0, 2.0]}),
        ],
    );
}

fn ingest(dir: &Path) -> Output {
    snapdiag(&[
        "ingest",
        "--manifest",
        p(&dir.join("manifest.jsonl")),
        "--raw",
        p(&dir.join("raw.jsonl")),
        "--out",
        p(&dir.join("gallery")),
    ])
}

#[test]
fn ingest_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    small_ingest_inputs(dir.path(), json!([0.0, 1.0, 0.0]));
    let o = ingest(dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = stdout(&o);
    assert!(summary.contains("count\t3"), "{summary}");
    assert!(summary.contains("dim\t3"), "{summary}");

    let vectors = fs::read(dir.path().join("gallery/vectors.bin")).unwrap();
    assert_eq!(vectors.len(), 20 + 4 * 3 * 3);
    let first: Vec<f32> = vectors[20..32].chunks(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    assert_eq!(first, vec![0.6, 0.8, 0.0]);

    let o = snapdiag(&["validate", "--gallery", p(&dir.path().join("gallery"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), summary);
}

#[test]
fn ingest_rejects_zero_vector_by_id() {
    let dir = tempfile::tempdir().unwrap();
    small_ingest_inputs(dir.path(), json!([0.0, 0.0, 0.0]));
    let o = ingest(dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("\"b\""), "{}", stderr(&o));
    assert!(!dir.path().join("gallery/vectors.bin").exists());
}

#[test]
fn ingest_missing_manifest_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    small_ingest_inputs(dir.path(), json!([0.0, 1.0, 0.0]));
    fs::remove_file(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(code(&ingest(dir.path())), 1);
}

#[test]
fn validate_detects_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    synth(&gallery, &["--classes", "3", "--per-class", "2", "--dim", "8"]);
    let path = gallery.join("vectors.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes.pop();
    fs::write(&path, bytes).unwrap();
    let o = snapdiag(&["validate", "--gallery", p(&gallery)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&snapdiag(&["bogus"])), 64);
    assert_eq!(code(&snapdiag(&["synth"])), 64);
    assert_eq!(code(&snapdiag(&["synth", "--out", "x", "--noise", "-1"])), 64);
    assert_eq!(code(&snapdiag(&["query", "--gallery", "g"])), 64);
    assert_eq!(code(&snapdiag(&["query", "--gallery", "g", "--text", "yellow spots"])), 64);
    assert_eq!(code(&snapdiag(&["--help"])), 0);
}

#[test]
fn synth_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth(&a, &[]);
    synth(&b, &[]);
    synth(&c, &["--seed", "8"]);
    let bytes = fs::read(a.join("vectors.bin")).unwrap();
    assert_eq!(bytes.len(), 20 + 4 * 1780 * 512);
    assert_eq!(bytes, fs::read(b.join("vectors.bin")).unwrap());
    assert_eq!(fs::read(a.join("manifest.jsonl")).unwrap(), fs::read(b.join("manifest.jsonl")).unwrap());
    assert_ne!(bytes, fs::read(c.join("vectors.bin")).unwrap());

    let manifest = fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    let classes: std::collections::BTreeSet<String> = manifest
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["class"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(classes.len(), 89);
}

#[test]
fn evaluate_prints_table_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    synth(&gallery, &["--classes", "6", "--per-class", "5", "--dim", "32", "--noise", "0.01"]);
    let report_path = dir.path().join("report.json");
    let o = snapdiag(&["evaluate", "--gallery", p(&gallery), "--k", "1,3", "--out", p(&report_path), "--method", "mine"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["Method", "Top-1", "Top-3", "mAP"]);
    assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["mine", "100.00", "100.00", "100.00"]);
    assert!(lines[2].contains("queries 30  skipped 0"), "{text}");

    let report: Value = serde_json::from_str(&fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(report["top_k_accuracy"]["1"], 100.0);
    assert_eq!(report["protocol"], "leave_one_out");
    assert_eq!(report["per_class_ap"].as_object().unwrap().len(), 6);
}

#[test]
fn evaluate_skips_singleton_classes_and_rejects_bad_k() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    synth(&gallery, &["--classes", "4", "--per-class", "1", "--dim", "8"]);
    let o = snapdiag(&["evaluate", "--gallery", p(&gallery)]);
    assert_eq!(code(&o), 2, "every query is skipped: {}", stdout(&o));

    let o = snapdiag(&["evaluate", "--gallery", p(&gallery), "--k", "5,1"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn evaluate_held_out_queries() {
    let dir = tempfile::tempdir().unwrap();
    let (gallery, queries) = (dir.path().join("g"), dir.path().join("q"));
    synth(&gallery, &["--classes", "5", "--per-class", "4", "--dim", "16", "--noise", "0"]);
    synth(&queries, &["--classes", "5", "--per-class", "1", "--dim", "16", "--noise", "0"]);
    let o = snapdiag(&["evaluate", "--gallery", p(&gallery), "--queries", p(&queries)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("queries 5  skipped 0  gallery 20  protocol held_out"), "{}", stdout(&o));
}

fn result_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .take_while(|l| !l.is_empty())
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

#[test]
fn query_by_vector_finds_itself() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    synth(&gallery, &["--classes", "4", "--per-class", "3", "--dim", "8", "--noise", "0.2"]);
    let snapshot = snapdiag_core::load_gallery(&gallery).unwrap();
    let record = &snapshot.records()[7];
    let vector_path = dir.path().join("q.json");
    fs::write(&vector_path, json!({ "vector": snapshot.row_vector(7) }).to_string()).unwrap();

    let o = snapdiag(&["query", "--gallery", p(&gallery), "--vector", p(&vector_path), "-k", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = result_rows(&stdout(&o));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], ["1", "1.0000", record.class_label.as_str(), record.id.as_str()]);
    assert!(stdout(&o).contains(&format!("\ncandidate\tscore\tsupport\n{}\t1.0000\t", record.class_label)));

    let o = snapdiag(&["query", "--gallery", p(&gallery), "--vector", p(&vector_path), "--class", "class_000"]);
    assert!(result_rows(&stdout(&o)).iter().all(|r| r[2] == "class_000"));

    fs::write(&vector_path, "[1, 2, 3]").unwrap();
    let o = snapdiag(&["query", "--gallery", p(&gallery), "--vector", p(&vector_path)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn query_by_image_uses_embedder() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    synth(&gallery, &["--classes", "4", "--per-class", "3", "--dim", "16"]);
    let photo = dir.path().join("leaf.jpg");
    let bytes = [0xff, 0xd8, 0xff, 0xe0, 1, 2, 3];
    fs::write(&photo, bytes).unwrap();
    let vector_path = dir.path().join("q.json");
    fs::write(&vector_path, json!(stub_vector(&bytes, 16)).to_string()).unwrap();

    let runtime = tokio::runtime::Runtime::new().unwrap();
    let (addr, _handle) = runtime.block_on(spawn_stub(16, StubBehavior::Normal)).unwrap();
    let url = format!("http://{addr}");

    let by_image = snapdiag(&["query", "--gallery", p(&gallery), "--image", p(&photo), "--embedder", &url]);
    assert_eq!(code(&by_image), 0, "{}", stderr(&by_image));
    let by_vector = snapdiag(&["query", "--gallery", p(&gallery), "--vector", p(&vector_path)]);
    assert_eq!(stdout(&by_image), stdout(&by_vector));

    let o = snapdiag(&["query", "--gallery", p(&gallery), "--text", "orange pustules", "--embedder", &url]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(result_rows(&stdout(&o)).len(), 10);

    let o = snapdiag(&["query", "--gallery", p(&gallery), "--text", "x", "--embedder", "http://127.0.0.1:9"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn serve_without_vectors_fails() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    synth(&gallery, &["--classes", "2", "--per-class", "2", "--dim", "4"]);
    fs::remove_file(gallery.join("vectors.bin")).unwrap();
    let o = snapdiag(&["serve", "--gallery", p(&gallery), "--listen", "127.0.0.1:0"]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("vectors.bin"), "{}", stderr(&o));
}
