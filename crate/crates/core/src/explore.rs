//! Dataset-level operations shared by the CLI and the HTTP service:
//! cached retrieval over all layers, category-filtered feature subsets, and
//! the mapper document (graph plus both layouts) for one layer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ballmapper::{build_adaptive, Epsilon, MapperGraph, MapperParams};
use crate::concepts::{retrieve_features, AssignmentTable, ConceptSet, ConceptVectors};
use crate::dataset::{Dataset, LayerData};
use crate::error::{Error, Result};
use crate::ingestion::cache::{sha256_hex, Cache, CacheKey};
use crate::layout::{layout_pair, LayoutPair, DEFAULT_FORCE_ITERATIONS};

pub const CONCEPTS_DIR: &str = "concepts";

/// A concept set with the sentence embeddings of its words.
#[derive(Debug, Clone)]
pub struct ConceptBundle {
    pub set: ConceptSet,
    pub vectors: ConceptVectors,
    /// Digest of the set and its vectors.
    pub digest: String,
}

impl ConceptBundle {
    pub fn new(set: ConceptSet, vectors: ConceptVectors) -> Self {
        let set_json = serde_json::to_string(&set).expect("concept sets serialize");
        let digest = sha256_hex(format!("{set_json}\n{}", vectors.to_json_string()).as_bytes());
        Self { set, vectors, digest }
    }

    /// Path of the vectors sidecar for a concept-set file: `<stem>.vectors.json`.
    pub fn vectors_path(set_path: &Path) -> PathBuf {
        let stem = set_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        set_path.with_file_name(format!("{stem}.vectors.json"))
    }

    /// Loads a concept-set file and its vectors (the sidecar unless
    /// `vectors_path` is given).
    pub fn load(set_path: &Path, vectors_path: Option<&Path>) -> Result<Self> {
        let set = ConceptSet::load(set_path)?;
        let vpath = vectors_path.map(Path::to_path_buf).unwrap_or_else(|| Self::vectors_path(set_path));
        let vectors = ConceptVectors::load(&vpath)?;
        Ok(Self::new(set, vectors))
    }
}

/// Concept sets stored under `data_dir/concepts/`, sorted by name.
pub fn discover_concept_sets(data_dir: &Path) -> Result<Vec<ConceptBundle>> {
    let dir = data_dir.join(CONCEPTS_DIR);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            !name.ends_with(".vectors.json") && (name.ends_with(".json") || name.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    let mut out = paths.iter().map(|p| ConceptBundle::load(p, None)).collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.set.name.cmp(&b.set.name));
    Ok(out)
}

/// Copies a concept set and its vectors into `data_dir/concepts/`.
pub fn install_concept_set(data_dir: &Path, set_path: &Path, vectors_path: Option<&Path>) -> Result<PathBuf> {
    let bundle = ConceptBundle::load(set_path, vectors_path)?;
    let dir = data_dir.join(CONCEPTS_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dest = dir.join(format!("{}.json", bundle.set.name));
    std::fs::write(&dest, concept_set_document(&bundle.set)).map_err(|e| Error::io(&dest, e))?;
    let vdest = ConceptBundle::vectors_path(&dest);
    std::fs::write(&vdest, bundle.vectors.to_json_string()).map_err(|e| Error::io(&vdest, e))?;
    Ok(dest)
}

/// The JSON interchange form of a concept set.
pub fn concept_set_document(set: &ConceptSet) -> String {
    let categories: Vec<serde_json::Value> = set
        .categories
        .iter()
        .map(|c| {
            let words: Vec<&str> = set.concepts_in(c.category_id).map(|i| set.concepts[i].word.as_str()).collect();
            serde_json::json!({ "name": c.name, "concepts": words })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "name": set.name, "categories": categories }))
        .expect("concept set document serializes")
}

pub fn assignment_cache_key(layer: &LayerData, bundle: &ConceptBundle, threshold: f64) -> CacheKey {
    CacheKey::builder("assignments")
        .param("layer", layer.layer_id)
        .param("inputs", &layer.input_digest)
        .param("concepts", &bundle.digest)
        .param("threshold", threshold)
        .build()
}

#[derive(Debug, Clone)]
pub struct RetrievalRun {
    /// One table per layer, ascending layer id.
    pub tables: Vec<AssignmentTable>,
    pub cache_hits: usize,
    pub keys: Vec<CacheKey>,
}

/// Assignment tables for every layer, read from or written through `cache`.
pub fn retrieve_all(
    dataset: &Dataset,
    bundle: &ConceptBundle,
    threshold: f64,
    cache: Option<&Cache>,
) -> Result<RetrievalRun> {
    use rayon::prelude::*;

    let results: Vec<(AssignmentTable, bool, CacheKey)> = dataset
        .layers
        .par_iter()
        .map(|layer| {
            let key = assignment_cache_key(layer, bundle, threshold);
            if let Some(hit) = cache.and_then(|c| c.get_json::<AssignmentTable>(&key)) {
                return Ok((hit, true, key));
            }
            let table = retrieve_features(&layer.embeddings, &bundle.set, &bundle.vectors, threshold)?;
            if let Some(c) = cache {
                c.put_json(&key, &table)?;
            }
            Ok((table, false, key))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut run = RetrievalRun { tables: Vec::new(), cache_hits: 0, keys: Vec::new() };
    for (table, hit, key) in results {
        run.cache_hits += usize::from(hit);
        run.tables.push(table);
        run.keys.push(key);
    }
    Ok(run)
}

/// Category ids for the given names; unknown names are an error.
pub fn resolve_categories(set: &ConceptSet, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            set.category_by_name(n)
                .map(|c| c.category_id)
                .ok_or_else(|| Error::Validation(format!("unknown category {n:?}")))
        })
        .collect()
}

/// Ascending feature indices of the table reached through concepts of the
/// given categories (all assigned features when `categories` is empty).
pub fn feature_subset(table: &AssignmentTable, set: &ConceptSet, categories: &[usize]) -> Vec<usize> {
    if categories.is_empty() {
        return table.feature_indices().into_iter().collect();
    }
    let by_cat = table.features_by_category(set);
    let mut out: Vec<usize> = categories.iter().flat_map(|&c| by_cat[c].iter().copied()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Everything that determines a mapper document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperRequest {
    pub layer: u32,
    /// Category names; empty means every retrieved feature.
    pub categories: Vec<String>,
    pub epsilon: Epsilon,
    pub eta: f64,
    pub max_node_size: usize,
    pub seed: u64,
    pub force_iterations: usize,
}

impl MapperRequest {
    pub fn new(layer: u32) -> Self {
        let d = MapperParams::default();
        Self {
            layer,
            categories: Vec::new(),
            epsilon: d.epsilon,
            eta: d.eta,
            max_node_size: d.max_node_size,
            seed: d.seed,
            force_iterations: DEFAULT_FORCE_ITERATIONS,
        }
    }

    pub fn params(&self) -> MapperParams {
        MapperParams {
            epsilon: self.epsilon,
            eta: self.eta,
            max_node_size: self.max_node_size,
            seed: self.seed,
            ..MapperParams::default()
        }
    }
}

/// Mapper graph over a filtered feature subset, with member and center
/// indices expressed as feature indices, plus anchored and force layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperDocument {
    pub layer: u32,
    pub categories: Vec<String>,
    pub params: MapperRequest,
    pub n_points: usize,
    #[serde(flatten)]
    pub graph: MapperGraph,
    pub layouts: LayoutPair,
}

impl MapperDocument {
    /// Canonical byte encoding shared by the CLI export and the HTTP API.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("mapper documents serialize");
        out.push(b'\n');
        out
    }
}

pub fn mapper_document(
    dataset: &Dataset,
    table: &AssignmentTable,
    set: &ConceptSet,
    request: &MapperRequest,
) -> Result<MapperDocument> {
    let layer = dataset
        .layer(request.layer)
        .ok_or(Error::Index { what: "layer", index: request.layer as usize, len: dataset.layers.len() })?;
    let params = request.params();
    params.validate()?;
    if request.force_iterations == 0 {
        return Err(Error::InvalidParameter("force_iterations must be at least 1".into()));
    }
    let categories = resolve_categories(set, &request.categories)?;
    let subset = feature_subset(table, set, &categories);

    let graph = if subset.is_empty() {
        MapperGraph { epsilon_used: 0.0, shrink_iterations: 0, nodes: Vec::new(), edges: Vec::new() }
    } else {
        let points = layer.features.subset(&subset)?;
        build_adaptive(&points, &params)?.relabel(&subset)?
    };
    let layouts = layout_pair(&graph, layer.projection()?, request.seed, request.force_iterations)?;
    Ok(MapperDocument {
        layer: request.layer,
        categories: request.categories.clone(),
        params: request.clone(),
        n_points: subset.len(),
        graph,
        layouts,
    })
}
