//! Python bindings for `saescope-core`.
//!
//! Structured results (graphs, layouts, assignment tables) cross the boundary
//! as plain dicts and lists decoded from the same JSON the service emits.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use saescope_core::explore::{mapper_document, ConceptBundle as CoreBundle, MapperRequest};
use saescope_core::layout::DEFAULT_FORCE_ITERATIONS;
use saescope_core::pointcloud::DEFAULT_MAX_PAIRS;
use saescope_core::synthetic::{write_synthetic_dataset, SyntheticConfig};
use saescope_core::{Epsilon, Error, MapperParams};

create_exception!(saescope, MaxIterationsError, PyRuntimeError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::MaxIterations { .. } => MaxIterationsError::new_err(e.to_string()),
        Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_epsilon(epsilon: &Bound<'_, PyAny>) -> PyResult<Epsilon> {
    if let Ok(e) = epsilon.extract::<f64>() {
        return Ok(Epsilon::Fixed(e));
    }
    let s: String = epsilon.extract()?;
    s.parse().map_err(py_err)
}

/// Row-major matrix of decoder directions, one row per feature.
#[pyclass(frozen)]
struct FeatureMatrix(saescope_core::FeatureMatrix);

#[pymethods]
impl FeatureMatrix {
    #[new]
    #[pyo3(signature = (rows, layer_id = 0))]
    fn new(rows: Vec<Vec<f32>>, layer_id: u32) -> PyResult<Self> {
        saescope_core::FeatureMatrix::from_rows(layer_id, &rows).map(Self).map_err(py_err)
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.0.n_features()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn layer_id(&self) -> u32 {
        self.0.layer_id()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.0.n_features() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.0.row(i).to_vec())
    }

    fn distance(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.0.n_features();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("row out of range for {n} features")));
        }
        Ok(self.0.row_distance(i, j))
    }

    /// `k` nearest rows to `query` as `(index, distance)` pairs.
    fn k_nearest(&self, query: usize, k: usize) -> PyResult<Vec<(usize, f64)>> {
        saescope_core::k_nearest(&self.0, query, k).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.n_features()
    }

    fn __repr__(&self) -> String {
        format!("FeatureMatrix(layer_id={}, n_features={}, dim={})", self.0.layer_id(), self.0.n_features(), self.0.dim())
    }
}

#[pyfunction]
fn cosine_distance(u: Vec<f32>, v: Vec<f32>) -> PyResult<f64> {
    saescope_core::cosine_distance(&u, &v).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (matrix, max_pairs = DEFAULT_MAX_PAIRS, seed = 42))]
fn sample_distances(matrix: &FeatureMatrix, max_pairs: usize, seed: u64) -> PyResult<Vec<f64>> {
    saescope_core::sample_pairwise_distances(&matrix.0, max_pairs, seed).map(|s| s.values).map_err(py_err)
}

/// Elbow estimate of the ball radius from sampled pairwise distances.
#[pyfunction]
#[pyo3(signature = (matrix, max_pairs = DEFAULT_MAX_PAIRS, seed = 42))]
fn estimate_epsilon(matrix: &FeatureMatrix, max_pairs: usize, seed: u64) -> PyResult<f64> {
    let sample = saescope_core::sample_pairwise_distances(&matrix.0, max_pairs, seed).map_err(py_err)?;
    saescope_core::estimate_epsilon(&sample).map_err(py_err)
}

/// Adaptive ball mapper graph as a dict with `nodes`, `edges`,
/// `epsilon_used` and `shrink_iterations`.
#[pyfunction]
#[pyo3(signature = (matrix, epsilon = None, eta = None, max_node_size = None, seed = None))]
fn build_mapper<'py>(
    py: Python<'py>,
    matrix: &FeatureMatrix,
    epsilon: Option<&Bound<'py, PyAny>>,
    eta: Option<f64>,
    max_node_size: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let d = MapperParams::default();
    let params = MapperParams {
        epsilon: epsilon.map(parse_epsilon).transpose()?.unwrap_or(d.epsilon),
        eta: eta.unwrap_or(d.eta),
        max_node_size: max_node_size.unwrap_or(d.max_node_size),
        seed: seed.unwrap_or(d.seed),
        ..d
    };
    let graph = py.detach(|| saescope_core::build_adaptive(&matrix.0, &params)).map_err(py_err)?;
    to_py(py, &graph)
}

/// Anchored and force layouts of a graph dict from `build_mapper`.
#[pyfunction]
#[pyo3(signature = (graph, projection, seed = 42, iterations = DEFAULT_FORCE_ITERATIONS))]
fn layouts<'py>(
    py: Python<'py>,
    graph: &Bound<'py, PyAny>,
    projection: Vec<[f64; 2]>,
    seed: u64,
    iterations: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (graph,))?.extract()?;
    let graph: saescope_core::MapperGraph =
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("not a mapper graph: {e}")))?;
    let projection = saescope_core::Projection2D::new(0, saescope_core::layout::ProjectionSource::Precomputed, projection)
        .map_err(py_err)?;
    let pair = saescope_core::layout_pair(&graph, &projection, seed, iterations).map_err(py_err)?;
    to_py(py, &pair)
}

/// Ingested dataset loaded from its manifest.
#[pyclass(frozen)]
struct Dataset(saescope_core::Dataset);

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        saescope_core::Dataset::load(manifest).map(Self).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> &str {
        self.0.name()
    }

    #[getter]
    fn layer_ids(&self) -> Vec<u32> {
        self.0.layer_ids()
    }

    fn features(&self, layer_id: u32) -> PyResult<FeatureMatrix> {
        let layer = self.0.layer(layer_id).ok_or_else(|| PyValueError::new_err(format!("no layer {layer_id}")))?;
        Ok(FeatureMatrix(layer.features.clone()))
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, layers={:?})", self.0.name(), self.0.layer_ids())
    }
}

/// Concept set plus its concept embeddings.
#[pyclass(frozen)]
struct ConceptSet(CoreBundle);

#[pymethods]
impl ConceptSet {
    #[staticmethod]
    #[pyo3(signature = (path, vectors = None))]
    fn load(path: PathBuf, vectors: Option<PathBuf>) -> PyResult<Self> {
        CoreBundle::load(&path, vectors.as_deref()).map(Self).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.set.name
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.0.set.categories.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn n_concepts(&self) -> usize {
        self.0.set.concepts.len()
    }
}

/// Assignment table of one layer: `{layer_id, threshold, rows: [...]}`.
#[pyfunction]
#[pyo3(signature = (dataset, concepts, layer_id, threshold = saescope_core::concepts::DEFAULT_THRESHOLD))]
fn retrieve<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    concepts: &ConceptSet,
    layer_id: u32,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let layer = dataset.0.layer(layer_id).ok_or_else(|| PyValueError::new_err(format!("no layer {layer_id}")))?;
    let table = saescope_core::retrieve_features(&layer.embeddings, &concepts.0.set, &concepts.0.vectors, threshold)
        .map_err(py_err)?;
    to_py(py, &table)
}

/// The mapper document served by the API for one layer and category filter.
#[pyfunction]
#[pyo3(signature = (dataset, concepts, layer_id, categories = Vec::new(), threshold = saescope_core::concepts::DEFAULT_THRESHOLD, epsilon = None, seed = None))]
#[allow(clippy::too_many_arguments)]
fn mapper<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    concepts: &ConceptSet,
    layer_id: u32,
    categories: Vec<String>,
    threshold: f64,
    epsilon: Option<&Bound<'py, PyAny>>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let layer = dataset.0.layer(layer_id).ok_or_else(|| PyValueError::new_err(format!("no layer {layer_id}")))?;
    let table = saescope_core::retrieve_features(&layer.embeddings, &concepts.0.set, &concepts.0.vectors, threshold)
        .map_err(py_err)?;
    let mut request = MapperRequest::new(layer_id);
    request.categories = categories;
    if let Some(e) = epsilon {
        request.epsilon = parse_epsilon(e)?;
    }
    if let Some(s) = seed {
        request.seed = s;
    }
    let doc = py.detach(|| mapper_document(&dataset.0, &table, &concepts.0.set, &request)).map_err(py_err)?;
    to_py(py, &doc)
}

/// Writes the built-in synthetic dataset; returns the manifest and concept paths.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 7))]
fn write_synthetic(out_dir: PathBuf, seed: u64) -> PyResult<(PathBuf, PathBuf)> {
    let config = SyntheticConfig { seed, ..SyntheticConfig::default() };
    let paths = write_synthetic_dataset(&out_dir, &config).map_err(py_err)?;
    Ok((paths.manifest, paths.concepts))
}

#[pymodule]
fn saescope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MaxIterationsError", m.py().get_type::<MaxIterationsError>())?;
    m.add_class::<FeatureMatrix>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<ConceptSet>()?;
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(sample_distances, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(build_mapper, m)?)?;
    m.add_function(wrap_pyfunction!(layouts, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve, m)?)?;
    m.add_function(wrap_pyfunction!(mapper, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic, m)?)?;
    Ok(())
}
