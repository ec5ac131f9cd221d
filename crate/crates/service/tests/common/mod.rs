#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use saescope::{AppState, ServiceConfig};
use saescope_core::dataset::ingest;
use saescope_core::explore::install_concept_set;
use saescope_core::ingestion::explanations::{to_json_lines, ExplanationRecord};
use saescope_core::ingestion::manifest::{DatasetManifest, LayerEntry};
use saescope_core::ingestion::matrix;
use saescope_core::synthetic::{write_synthetic_dataset, SyntheticConfig};
use saescope_core::ConceptVectors;
use serde_json::Value;
use tower::ServiceExt;

pub struct Env {
    pub dir: tempfile::TempDir,
    pub data: PathBuf,
    pub cache: PathBuf,
    pub raw: PathBuf,
}

impl Env {
    pub fn config(&self) -> ServiceConfig {
        let mut c = ServiceConfig::new(&self.data);
        c.cache_dir = Some(self.cache.clone());
        c
    }

    pub fn state(&self) -> Arc<AppState> {
        Arc::new(AppState::load(self.config()).expect("state loads"))
    }

    pub fn router(&self) -> axum::Router {
        saescope::router(self.state())
    }
}

fn empty_env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cache = dir.path().join("cache");
    let raw = dir.path().join("raw");
    std::fs::create_dir_all(&data).unwrap();
    Env { dir, data, cache, raw }
}

pub fn empty() -> Env {
    empty_env()
}

/// The default synthetic dataset, ingested, with its concept set installed.
pub fn synthetic() -> Env {
    let env = empty_env();
    let paths = write_synthetic_dataset(&env.raw, &SyntheticConfig::default()).unwrap();
    ingest(&paths.manifest, &env.data).unwrap();
    install_concept_set(&env.data, &paths.concepts, None).unwrap();
    env
}

/// Writes a raw dataset from explicit rows; `None` text means no explanation.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    features: &[Vec<f32>],
    embeddings: &[Vec<f32>],
    texts: &[Option<&str>],
) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let flat: Vec<f32> = features.iter().flatten().copied().collect();
    matrix::write_raw(dir.join("f.bin"), features.len(), features[0].len(), &flat).unwrap();
    let flat: Vec<f32> = embeddings.iter().flatten().copied().collect();
    matrix::write_raw(dir.join("e.bin"), embeddings.len(), embeddings[0].len(), &flat).unwrap();
    let records: Vec<ExplanationRecord> = texts
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            t.map(|t| ExplanationRecord { layer_id: 0, feature_index: i, text: t.into(), source_url: None })
        })
        .collect();
    std::fs::write(dir.join("x.jsonl"), to_json_lines(&records)).unwrap();
    let manifest = DatasetManifest {
        name: name.into(),
        model: "tiny-model".into(),
        sae_id: Some("tiny-sae".into()),
        embedding_dim: embeddings[0].len(),
        feature_dim: None,
        layers: vec![LayerEntry {
            layer_id: 0,
            features_path: "f.bin".into(),
            explanations_path: "x.jsonl".into(),
            embeddings_path: Some("e.bin".into()),
            projection_path: None,
        }],
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json_string()).unwrap();
    path
}

/// Eight features: six identical ("dup"), one alone ("solo"), and one with no
/// explanation whose concept ("rest") therefore retrieves nothing.
pub fn tiny() -> Env {
    let env = empty_env();
    let mut features = vec![vec![1.0, 0.0, 0.0, 0.0]; 6];
    features.push(vec![0.0, 1.0, 0.0, 0.0]);
    features.push(vec![0.0, 0.0, 1.0, 0.0]);
    let mut embeddings = vec![vec![1.0, 0.0, 0.0]; 6];
    embeddings.push(vec![0.0, 1.0, 0.0]);
    embeddings.push(vec![0.0, 0.0, 0.0]);
    let texts: Vec<Option<&str>> = (0..7).map(|_| Some("repeated token")).chain([None]).collect();
    let manifest = write_dataset(&env.raw, "tiny", &features, &embeddings, &texts);
    ingest(&manifest, &env.data).unwrap();

    let set = env.raw.join("tiny-set.json");
    std::fs::write(
        &set,
        r#"{"name":"tiny-set","categories":[
            {"name":"dup","concepts":["a"]},
            {"name":"solo","concepts":["b"]},
            {"name":"rest","concepts":["c"]}]}"#,
    )
    .unwrap();
    let mut vectors = ConceptVectors::new(3);
    vectors.insert("a", &[1.0, 0.0, 0.0]).unwrap();
    vectors.insert("b", &[0.0, 1.0, 0.0]).unwrap();
    vectors.insert("c", &[0.0, 0.0, 1.0]).unwrap();
    std::fs::write(env.raw.join("tiny-set.vectors.json"), vectors.to_json_string()).unwrap();
    install_concept_set(&env.data, &set, None).unwrap();
    env
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn send(router: &axum::Router, request: Request<Body>) -> Reply {
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, headers, bytes }
}

pub async fn get(router: &axum::Router, uri: &str) -> Reply {
    send(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post(router: &axum::Router, uri: &str, body: &str) -> Reply {
    let request = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(router, request).await
}

pub fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.json"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn assert_schema(name: &str, value: &Value) {
    let validator = schema(name);
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:#?}\n{value}");
}

/// Runs the `saescope` binary.
pub fn cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_saescope"))
        .args(args)
        .env_remove("SAESCOPE_CACHE_DIR")
        .env_remove("SAESCOPE_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
