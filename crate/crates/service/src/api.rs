//! HTTP routes.

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use saescope_core::ballmapper::shortest_node_path;
use saescope_core::concepts::{category_stats, concepts_per_layer, pinned_comparison, search_concepts, DEFAULT_THRESHOLD};
use saescope_core::explore::{feature_subset, MapperRequest};
use saescope_core::k_nearest;
use saescope_core::pointcloud::DEFAULT_NEIGHBORS;
use saescope_core::Epsilon;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, Session};

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| {
            let o = origin.as_bytes();
            o.starts_with(b"http://localhost") || o.starts_with(b"http://127.0.0.1")
        }))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);

    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/datasets", get(datasets))
        .route("/api/concept-sets", get(concept_sets))
        .route("/api/session", get(session))
        .route("/api/retrieval", post(retrieval))
        .route("/api/layers/{id}/categories", get(categories))
        .route("/api/layers/{id}/points", get(points))
        .route("/api/layers/{id}/mapper", get(mapper))
        .route("/api/layers/{id}/features/{index}", get(feature))
        .route("/api/layers/{id}/search", get(search))
        .route("/api/layers/{id}/path", get(path))
        .fallback(not_found);

    let app = match state.config.ui_dir.as_ref().filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors).with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn layer_id(raw: &str) -> ApiResult<u32> {
    raw.parse().map_err(|_| ApiError::not_found(format!("unknown layer {raw:?}")))
}

fn split_list(raw: Option<&str>) -> Vec<String> {
    raw.unwrap_or_default().split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct DatasetInfo {
    name: String,
    model: String,
    layers: Vec<u32>,
}

async fn datasets(State(state): State<Shared>) -> Json<Vec<DatasetInfo>> {
    Json(
        state
            .datasets
            .values()
            .map(|d| DatasetInfo { name: d.name().to_string(), model: d.manifest.model.clone(), layers: d.layer_ids() })
            .collect(),
    )
}

#[derive(Serialize)]
struct ConceptSetInfo {
    name: String,
    concepts: usize,
    categories: Vec<String>,
}

async fn concept_sets(State(state): State<Shared>) -> Json<Vec<ConceptSetInfo>> {
    Json(
        state
            .concept_sets
            .values()
            .map(|b| ConceptSetInfo {
                name: b.set.name.clone(),
                concepts: b.set.concepts.len(),
                categories: b.set.categories.iter().map(|c| c.name.clone()).collect(),
            })
            .collect(),
    )
}

#[derive(Serialize)]
struct RetrievalResponse {
    dataset: String,
    concept_set: String,
    threshold: f64,
    layers: Vec<saescope_core::concepts::LayerCount>,
}

fn retrieval_response(s: &Session) -> RetrievalResponse {
    RetrievalResponse {
        dataset: s.dataset.name().to_string(),
        concept_set: s.bundle.set.name.clone(),
        threshold: s.threshold,
        layers: concepts_per_layer(&s.tables),
    }
}

async fn session(State(state): State<Shared>) -> ApiResult<Json<RetrievalResponse>> {
    let s = state.require_session()?;
    Ok(Json(retrieval_response(&s)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrievalRequest {
    dataset: String,
    concept_set: String,
    threshold: Option<f64>,
}

async fn retrieval(State(state): State<Shared>, body: Bytes) -> ApiResult<Json<RetrievalResponse>> {
    let req: RetrievalRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    let threshold = req.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let s = blocking(move || state.retrieve(&req.dataset, &req.concept_set, threshold)).await?;
    Ok(Json(retrieval_response(&s)))
}

#[derive(Deserialize)]
struct CategoriesQuery {
    pinned: Option<String>,
}

#[derive(Serialize)]
struct CategoryRow {
    category: String,
    category_id: usize,
    feature_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    shared_with_pinned: Option<usize>,
}

async fn categories(
    State(state): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<CategoriesQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<CategoryRow>>> {
    let q = query(q)?;
    let s = state.require_session()?;
    let (_, table) = s.layer(layer_id(&id)?)?;
    let rows = match q.pinned.as_deref().filter(|p| !p.is_empty()) {
        Some(name) => pinned_comparison(table, &s.bundle.set, s.category_ids(&[name.to_string()])?[0])?,
        None => category_stats(table, &s.bundle.set),
    };
    Ok(Json(
        rows.into_iter()
            .map(|r| CategoryRow {
                category: r.name,
                category_id: r.category_id,
                feature_count: r.feature_count,
                shared_with_pinned: r.shared_with_pinned,
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct PointsQuery {
    categories: Option<String>,
}

#[derive(Serialize)]
struct Point {
    index: usize,
    x: f64,
    y: f64,
    categories: Vec<String>,
    max_similarity: f64,
}

#[derive(Serialize)]
struct PointsResponse {
    layer: u32,
    features: Vec<Point>,
}

async fn points(
    State(state): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<PointsQuery>, QueryRejection>,
) -> ApiResult<Json<PointsResponse>> {
    let q = query(q)?;
    let s = state.require_session()?;
    let layer_id = layer_id(&id)?;
    let names = split_list(q.categories.as_deref());
    let cats = s.category_ids(&names)?;
    let s2 = Arc::clone(&s);
    let features = blocking(move || {
        let (layer, table) = s2.layer(layer_id)?;
        let projection = layer.projection()?;
        let set = &s2.bundle.set;
        let by_cat = table.features_by_category(set);
        let best = table.max_similarity();
        Ok(feature_subset(table, set, &cats)
            .into_iter()
            .map(|f| {
                let [x, y] = projection.coords[f];
                Point {
                    index: f,
                    x,
                    y,
                    categories: set
                        .categories
                        .iter()
                        .filter(|c| by_cat[c.category_id].contains(&f))
                        .map(|c| c.name.clone())
                        .collect(),
                    max_similarity: best[&f],
                }
            })
            .collect())
    })
    .await?;
    Ok(Json(PointsResponse { layer: layer_id, features }))
}

#[derive(Deserialize)]
struct MapperQuery {
    categories: Option<String>,
    epsilon: Option<String>,
    eta: Option<f64>,
    max_node_size: Option<usize>,
    seed: Option<u64>,
    force_iterations: Option<usize>,
}

impl MapperQuery {
    fn request(&self, layer: u32, default_seed: u64) -> ApiResult<MapperRequest> {
        let mut r = MapperRequest::new(layer);
        r.categories = split_list(self.categories.as_deref());
        if let Some(e) = self.epsilon.as_deref().filter(|e| !e.is_empty()) {
            r.epsilon = e.parse::<Epsilon>()?;
        }
        r.eta = self.eta.unwrap_or(r.eta);
        r.max_node_size = self.max_node_size.unwrap_or(r.max_node_size);
        r.seed = self.seed.unwrap_or(default_seed);
        r.force_iterations = self.force_iterations.unwrap_or(r.force_iterations);
        r.params().validate()?;
        Ok(r)
    }
}

async fn mapper(
    State(state): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<MapperQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let request = query(q)?.request(layer_id(&id)?, state.config.seed)?;
    let s = state.require_session()?;
    let out = blocking(move || s.mapper(&request)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], out.bytes.clone()).into_response())
}

#[derive(Serialize)]
struct FeatureConcept {
    concept_id: usize,
    word: String,
    similarity: f64,
}

#[derive(Serialize)]
struct Neighbor {
    index: usize,
    distance: f64,
    text: Option<String>,
}

#[derive(Serialize)]
struct FeatureDetail {
    layer: u32,
    index: usize,
    text: Option<String>,
    url: String,
    concepts: Vec<FeatureConcept>,
    categories: Vec<String>,
    neighbors: Vec<Neighbor>,
}

async fn feature(State(state): State<Shared>, Path((id, index)): Path<(String, String)>) -> ApiResult<Json<FeatureDetail>> {
    let s = state.require_session()?;
    let layer_id = layer_id(&id)?;
    let st = Arc::clone(&state);
    let detail = blocking(move || {
        let (layer, table) = s.layer(layer_id)?;
        let index: usize = index
            .parse()
            .ok()
            .filter(|&i| i < layer.n_features())
            .ok_or_else(|| ApiError::not_found(format!("layer {layer_id} has no feature {index:?}")))?;
        let record = layer.explanation(index);
        let set = &s.bundle.set;
        let concepts: Vec<FeatureConcept> = table
            .rows_for_feature(index)
            .map(|r| FeatureConcept {
                concept_id: r.concept_id,
                word: set.concepts[r.concept_id].word.clone(),
                similarity: r.similarity,
            })
            .collect();
        let cats: BTreeSet<usize> = concepts.iter().flat_map(|c| set.categories_of(c.concept_id)).collect();
        let k = DEFAULT_NEIGHBORS.min(layer.n_features() - 1);
        let neighbors = if k == 0 { Vec::new() } else { k_nearest(&layer.features, index, k)? };
        Ok(FeatureDetail {
            layer: layer_id,
            index,
            text: record.map(|r| r.text.clone()),
            url: record
                .and_then(|r| r.source_url.clone())
                .unwrap_or_else(|| st.config.feature_url(&s.dataset, layer_id, index)),
            concepts,
            categories: cats.into_iter().map(|c| set.categories[c].name.clone()).collect(),
            neighbors: neighbors
                .into_iter()
                .map(|(i, d)| Neighbor { index: i, distance: d, text: layer.explanation(i).map(|r| r.text.clone()) })
                .collect(),
        })
    })
    .await?;
    Ok(Json(detail))
}

#[derive(Deserialize)]
struct SearchQuery {
    q: Option<String>,
}

async fn search(
    State(state): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<SearchQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<saescope_core::concepts::ConceptHit>>> {
    let q = query(q)?;
    let s = state.require_session()?;
    let (_, table) = s.layer(layer_id(&id)?)?;
    Ok(Json(search_concepts(&s.bundle.set, table, q.q.as_deref().unwrap_or(""))))
}

#[derive(Deserialize)]
struct PathQuery {
    from: usize,
    to: usize,
    categories: Option<String>,
    epsilon: Option<String>,
    eta: Option<f64>,
    max_node_size: Option<usize>,
    seed: Option<u64>,
    force_iterations: Option<usize>,
}

#[derive(Serialize)]
struct PathResponse {
    from: usize,
    to: usize,
    path: Option<Vec<usize>>,
}

async fn path(
    State(state): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<PathQuery>, QueryRejection>,
) -> ApiResult<Json<PathResponse>> {
    let q = query(q)?;
    let mapper = MapperQuery {
        categories: q.categories,
        epsilon: q.epsilon,
        eta: q.eta,
        max_node_size: q.max_node_size,
        seed: q.seed,
        force_iterations: q.force_iterations,
    };
    let request = mapper.request(layer_id(&id)?, state.config.seed)?;
    let s = state.require_session()?;
    let (from, to) = (q.from, q.to);
    let path = blocking(move || {
        let out = s.mapper(&request)?;
        Ok(shortest_node_path(&out.document.graph, from, to)?)
    })
    .await?;
    Ok(Json(PathResponse { from, to, path }))
}

/// Binds `addr` and serves until ctrl-c. `on_bound` receives the actual
/// socket address (useful with port 0).
pub async fn serve(
    state: Shared,
    addr: std::net::SocketAddr,
    on_bound: impl FnOnce(std::net::SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
