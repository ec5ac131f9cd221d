//! In-memory datasets assembled from a manifest, and the `ingest` step that
//! validates a manifest's files into a data directory.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::concepts::{normalized, ExplanationEmbeddings};
use crate::error::{Error, Result};
use crate::ingestion::cache::{sha256_file, sha256_hex};
use crate::ingestion::explanations::{self, ExplanationRecord};
use crate::ingestion::manifest::{load_projection, write_projection, DatasetManifest, LayerEntry};
use crate::ingestion::matrix;
use crate::layout::{principal_components_2d, Projection2D};
use crate::pointcloud::FeatureMatrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKSUMS_FILE: &str = "checksums.json";

#[derive(Debug)]
pub struct LayerData {
    pub layer_id: u32,
    pub features: FeatureMatrix,
    /// Indexed by feature.
    pub explanations: Vec<Option<ExplanationRecord>>,
    pub embeddings: ExplanationEmbeddings,
    pub explanation_duplicates: usize,
    /// Digest over every input file of the layer.
    pub input_digest: String,
    precomputed: Option<Projection2D>,
    fallback: OnceLock<Projection2D>,
}

impl LayerData {
    pub fn n_features(&self) -> usize {
        self.features.n_features()
    }

    pub fn explanation(&self, feature: usize) -> Option<&ExplanationRecord> {
        self.explanations.get(feature).and_then(Option::as_ref)
    }

    pub fn explained_count(&self) -> usize {
        self.explanations.iter().filter(|e| e.is_some()).count()
    }

    pub fn has_precomputed_projection(&self) -> bool {
        self.precomputed.is_some()
    }

    /// The ingested projection, or the principal-components fallback
    /// (computed once on first use).
    pub fn projection(&self) -> Result<&Projection2D> {
        if let Some(p) = &self.precomputed {
            return Ok(p);
        }
        if let Some(p) = self.fallback.get() {
            return Ok(p);
        }
        let p = principal_components_2d(&self.features)?;
        Ok(self.fallback.get_or_init(|| p))
    }
}

#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub layers: Vec<LayerData>,
}

fn load_layer(manifest: &DatasetManifest, entry: &LayerEntry) -> Result<LayerData> {
    let layer_id = entry.layer_id;
    let features_path = manifest.resolve(&entry.features_path);
    let features = matrix::load_feature_matrix(&features_path, layer_id, manifest.feature_dim)?;
    let n = features.n_features();
    let mut digests = vec![sha256_file(&features_path)?];

    let expl_path = manifest.resolve(&entry.explanations_path);
    let load = explanations::load_explanations(&expl_path)?;
    digests.push(sha256_file(&expl_path)?);
    let mut by_feature: Vec<Option<ExplanationRecord>> = vec![None; n];
    for r in load.records.into_iter().filter(|r| r.layer_id == layer_id) {
        if r.feature_index >= n {
            return Err(Error::Validation(format!(
                "{}: explanation for feature {} but layer {layer_id} has {n} features",
                expl_path.display(),
                r.feature_index
            )));
        }
        let idx = r.feature_index;
        by_feature[idx] = Some(r);
    }

    let texts: Vec<Option<String>> = by_feature.iter().map(|r| r.as_ref().map(|r| r.text.clone())).collect();
    let embeddings = match &entry.embeddings_path {
        Some(p) => {
            let path = manifest.resolve(p);
            let raw = matrix::read_raw(&path)?;
            digests.push(sha256_file(&path)?);
            if raw.rows != n || raw.cols != manifest.embedding_dim {
                return Err(Error::Validation(format!(
                    "{}: embeddings are {}x{}, expected {n}x{}",
                    path.display(),
                    raw.rows,
                    raw.cols,
                    manifest.embedding_dim
                )));
            }
            let rows = (0..n).map(|i| Some(raw.row(i))).collect();
            ExplanationEmbeddings::new(layer_id, manifest.embedding_dim, texts, rows)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
        }
        None => ExplanationEmbeddings::new(layer_id, manifest.embedding_dim, texts, vec![None; n])?,
    };

    let precomputed = match &entry.projection_path {
        Some(p) => {
            let path = manifest.resolve(p);
            let proj = load_projection(&path)?;
            if proj.len() != n {
                return Err(Error::Validation(format!(
                    "{}: projection has {} rows, layer {layer_id} has {n} features",
                    path.display(),
                    proj.len()
                )));
            }
            digests.push(sha256_file(&path)?);
            Some(proj)
        }
        None => None,
    };

    Ok(LayerData {
        layer_id,
        features,
        explanations: by_feature,
        embeddings,
        explanation_duplicates: load.duplicates,
        input_digest: sha256_hex(digests.join(",").as_bytes()),
        precomputed,
        fallback: OnceLock::new(),
    })
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        Self::from_manifest(manifest)
    }

    pub fn from_manifest(manifest: DatasetManifest) -> Result<Self> {
        let layers = manifest.layers.iter().map(|e| load_layer(&manifest, e)).collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, layers })
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn layer(&self, layer_id: u32) -> Option<&LayerData> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn layer_ids(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.layer_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer_id: u32,
    pub n_features: usize,
    pub dim: usize,
    pub explained: usize,
    pub embedded: usize,
    pub coverage_pct: f64,
    pub projection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub dataset: String,
    pub model: String,
    pub destination: PathBuf,
    pub layers: Vec<LayerSummary>,
}

/// Validates every file named by the manifest and writes normalized copies
/// (unit-norm embeddings, canonical JSON lines), a rewritten manifest and
/// SHA-256 checksums into `data_dir/<dataset name>/`.
pub fn ingest(manifest_path: impl AsRef<Path>, data_dir: impl AsRef<Path>) -> Result<IngestSummary> {
    let dataset = Dataset::load(manifest_path)?;
    let dest = data_dir.as_ref().join(&dataset.manifest.name);
    std::fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;

    let mut entries = Vec::new();
    let mut summaries = Vec::new();
    let mut written: Vec<String> = Vec::new();
    for layer in &dataset.layers {
        let id = layer.layer_id;
        let features = format!("layer{id:02}.features.bin");
        matrix::write_feature_matrix(dest.join(&features), &layer.features)?;

        let explanations = format!("layer{id:02}.explanations.jsonl");
        let records: Vec<ExplanationRecord> = layer.explanations.iter().flatten().cloned().collect();
        let path = dest.join(&explanations);
        std::fs::write(&path, explanations::to_json_lines(&records)).map_err(|e| Error::io(&path, e))?;
        written.extend([features.clone(), explanations.clone()]);

        let source_entry = dataset.manifest.layer(id).expect("layer came from the manifest");
        let embeddings = match &source_entry.embeddings_path {
            Some(p) => {
                let raw = matrix::read_raw(dataset.manifest.resolve(p))?;
                let mut values = Vec::with_capacity(raw.values.len());
                for i in 0..raw.rows {
                    match normalized(raw.row(i)) {
                        Some(unit) => values.extend(unit.into_iter().map(|x| x as f32)),
                        None => values.extend(std::iter::repeat_n(0.0f32, raw.cols)),
                    }
                }
                let name = format!("layer{id:02}.embeddings.bin");
                matrix::write_raw(dest.join(&name), raw.rows, raw.cols, &values)?;
                written.push(name.clone());
                Some(PathBuf::from(name))
            }
            None => None,
        };
        let projection = if layer.has_precomputed_projection() {
            let name = format!("layer{id:02}.projection.json");
            write_projection(dest.join(&name), layer.projection()?)?;
            written.push(name.clone());
            written.push(format!("layer{id:02}.projection.bin"));
            Some(PathBuf::from(name))
        } else {
            None
        };

        entries.push(LayerEntry {
            layer_id: id,
            features_path: features.into(),
            explanations_path: explanations.into(),
            embeddings_path: embeddings,
            projection_path: projection,
        });
        let n = layer.n_features();
        summaries.push(LayerSummary {
            layer_id: id,
            n_features: n,
            dim: layer.features.dim(),
            explained: layer.explained_count(),
            embedded: layer.embeddings.embedded_count(),
            coverage_pct: 100.0 * layer.explained_count() as f64 / n as f64,
            projection: if layer.has_precomputed_projection() { "precomputed" } else { "principal_components" }.into(),
        });
    }

    let manifest = DatasetManifest {
        layers: entries,
        base_dir: dest.clone(),
        feature_dim: dataset.manifest.feature_dim.or(dataset.layers.first().map(|l| l.features.dim())),
        ..dataset.manifest.clone()
    };
    let manifest_path = dest.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, manifest.to_json_string()).map_err(|e| Error::io(&manifest_path, e))?;
    written.push(MANIFEST_FILE.into());

    let mut checksums = std::collections::BTreeMap::new();
    for name in &written {
        checksums.insert(name.clone(), sha256_file(dest.join(name))?);
    }
    let checksum_path = dest.join(CHECKSUMS_FILE);
    let text = serde_json::to_string_pretty(&checksums).expect("checksums serialize");
    std::fs::write(&checksum_path, text).map_err(|e| Error::io(&checksum_path, e))?;

    Ok(IngestSummary {
        dataset: dataset.manifest.name.clone(),
        model: dataset.manifest.model.clone(),
        destination: dest,
        layers: summaries,
    })
}

/// Manifests of every dataset under `data_dir` (one per subdirectory holding
/// a `manifest.json`), sorted by dataset name.
pub fn discover_datasets(data_dir: impl AsRef<Path>) -> Result<Vec<DatasetManifest>> {
    let data_dir = data_dir.as_ref();
    let mut out = Vec::new();
    let entries = std::fs::read_dir(data_dir).map_err(|e| Error::io(data_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(data_dir, e))?;
        let manifest = entry.path().join(MANIFEST_FILE);
        if manifest.is_file() {
            out.push(DatasetManifest::load(&manifest)?);
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}
