//! Loaded datasets, concept sets and the swappable retrieval session.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use saescope_core::concepts::{AssignmentTable, DEFAULT_THRESHOLD};
use saescope_core::dataset::discover_datasets;
use saescope_core::explore::{discover_concept_sets, mapper_document, retrieve_all, ConceptBundle, MapperDocument, MapperRequest};
use saescope_core::ingestion::Cache;
use saescope_core::{Dataset, Error, LayerData};

use crate::error::{ApiError, ApiResult};

pub const DEFAULT_PORT: u16 = 8077;
pub const DEFAULT_LINK_BASE: &str = "https://www.neuronpedia.org";
pub const DEFAULT_URL_TEMPLATE: &str = "{base}/{model}/{sae_id}/{feature}";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// `None` disables the assignment cache.
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub link_base: String,
    /// Placeholders: `{base}`, `{model}`, `{sae_id}`, `{layer}`, `{feature}`.
    pub url_template: String,
    pub ui_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            cache_dir: None,
            seed: saescope_core::ballmapper::DEFAULT_SEED,
            link_base: DEFAULT_LINK_BASE.into(),
            url_template: DEFAULT_URL_TEMPLATE.into(),
            ui_dir: None,
        }
    }

    pub fn feature_url(&self, dataset: &Dataset, layer: u32, feature: usize) -> String {
        self.url_template
            .replace("{base}", self.link_base.trim_end_matches('/'))
            .replace("{model}", &dataset.manifest.model)
            .replace("{sae_id}", dataset.manifest.sae_id.as_deref().unwrap_or(""))
            .replace("{layer}", &layer.to_string())
            .replace("{feature}", &feature.to_string())
    }
}

/// Retrieval results for one dataset, concept set and threshold. Replaced
/// wholesale on every retrieval request; readers keep the snapshot they took.
#[derive(Debug)]
pub struct Session {
    pub dataset: Arc<Dataset>,
    pub bundle: Arc<ConceptBundle>,
    pub threshold: f64,
    /// Ascending layer id, one per dataset layer.
    pub tables: Vec<AssignmentTable>,
    mapper_memo: Mutex<HashMap<String, Arc<MapperOutput>>>,
}

#[derive(Debug)]
pub struct MapperOutput {
    pub document: MapperDocument,
    pub bytes: Vec<u8>,
}

impl Session {
    pub fn layer(&self, layer_id: u32) -> ApiResult<(&LayerData, &AssignmentTable)> {
        let layer = self
            .dataset
            .layer(layer_id)
            .ok_or_else(|| ApiError::not_found(format!("dataset {:?} has no layer {layer_id}", self.dataset.name())))?;
        let table = self
            .tables
            .iter()
            .find(|t| t.layer_id == layer_id)
            .ok_or_else(|| ApiError::internal(format!("no assignment table for layer {layer_id}")))?;
        Ok((layer, table))
    }

    pub fn category_ids(&self, names: &[String]) -> ApiResult<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.bundle
                    .set
                    .category_by_name(n)
                    .map(|c| c.category_id)
                    .ok_or_else(|| ApiError::not_found(format!("unknown category {n:?}")))
            })
            .collect()
    }

    /// Mapper document for `request`, computed once per session.
    pub fn mapper(&self, request: &MapperRequest) -> ApiResult<Arc<MapperOutput>> {
        self.layer(request.layer)?;
        self.category_ids(&request.categories)?;
        let key = serde_json::to_string(request).map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(hit) = self.mapper_memo.lock().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let table = self.layer(request.layer)?.1;
        let document = mapper_document(&self.dataset, table, &self.bundle.set, request)?;
        let bytes = document.to_json_bytes();
        let out = Arc::new(MapperOutput { document, bytes });
        self.mapper_memo.lock().insert(key, Arc::clone(&out));
        Ok(out)
    }
}

#[derive(Debug)]
pub struct AppState {
    pub config: ServiceConfig,
    pub datasets: BTreeMap<String, Arc<Dataset>>,
    pub concept_sets: BTreeMap<String, Arc<ConceptBundle>>,
    pub cache: Option<Cache>,
    session: RwLock<Option<Arc<Session>>>,
}

impl AppState {
    /// Loads every dataset and concept set under the data directory and, when
    /// both exist, runs retrieval for the first of each at the default
    /// threshold.
    pub fn load(config: ServiceConfig) -> saescope_core::Result<Self> {
        if !config.data_dir.is_dir() {
            return Err(Error::Validation(format!("data directory {} does not exist", config.data_dir.display())));
        }
        let mut datasets = BTreeMap::new();
        for manifest in discover_datasets(&config.data_dir)? {
            let dataset = Dataset::from_manifest(manifest)?;
            datasets.insert(dataset.name().to_string(), Arc::new(dataset));
        }
        let concept_sets = discover_concept_sets(&config.data_dir)?
            .into_iter()
            .map(|b| (b.set.name.clone(), Arc::new(b)))
            .collect();
        let cache = config.cache_dir.as_ref().map(Cache::new);
        let state = Self { config, datasets, concept_sets, cache, session: RwLock::new(None) };
        let first = state.datasets.keys().next().cloned().zip(state.concept_sets.keys().next().cloned());
        if let Some((dataset, set)) = first {
            match state.retrieve(&dataset, &set, DEFAULT_THRESHOLD) {
                Ok(_) => {}
                Err(e) => log::warn!("initial retrieval for {dataset}/{set} failed: {e}"),
            }
        }
        Ok(state)
    }

    pub fn session(&self) -> Option<Arc<Session>> {
        self.session.read().clone()
    }

    pub fn require_session(&self) -> ApiResult<Arc<Session>> {
        self.session().ok_or_else(ApiError::no_session)
    }

    /// Computes (or cache-loads) assignments for every layer and swaps them in.
    pub fn retrieve(&self, dataset: &str, concept_set: &str, threshold: f64) -> ApiResult<Arc<Session>> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ApiError::bad_request(format!("threshold must be in [0, 1], got {threshold}")));
        }
        let ds = self
            .datasets
            .get(dataset)
            .ok_or_else(|| ApiError::not_found(format!("unknown dataset {dataset:?}")))?;
        let bundle = self
            .concept_sets
            .get(concept_set)
            .ok_or_else(|| ApiError::not_found(format!("unknown concept set {concept_set:?}")))?;
        let run = retrieve_all(ds, bundle, threshold, self.cache.as_ref())?;
        log::info!(
            "retrieval {dataset}/{concept_set} at {threshold}: {} of {} layers from cache",
            run.cache_hits,
            run.tables.len()
        );
        let session = Arc::new(Session {
            dataset: Arc::clone(ds),
            bundle: Arc::clone(bundle),
            threshold,
            tables: run.tables,
            mapper_memo: Mutex::new(HashMap::new()),
        });
        *self.session.write() = Some(Arc::clone(&session));
        Ok(session)
    }
}
