//! Dense feature vectors and the cosine-distance kernels built on them.
//!
//! A [`FeatureMatrix`] holds one layer's SAE decoder directions, one row per
//! feature. It is immutable once constructed and validated; every operation in
//! this module is a pure read.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of pairs drawn by [`sample_pairwise_distances`].
pub const DEFAULT_MAX_PAIRS: usize = 100_000;

/// Default neighbour count for [`k_nearest`].
pub const DEFAULT_NEIGHBORS: usize = 3;

/// Anything the ball mapper can cover: a finite set of points with a metric.
pub trait MetricSpace: Sync {
    fn len(&self) -> usize;

    fn distance(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major `n_features x dim` matrix of finite, nonzero `f32` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    layer_id: u32,
    n_features: usize,
    dim: usize,
    values: Vec<f32>,
    sq_norms: Vec<f64>,
}

impl FeatureMatrix {
    /// Validates `values` and builds the matrix. Rejects non-finite entries and
    /// all-zero rows.
    pub fn new(layer_id: u32, n_features: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if n_features == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "feature matrix must be non-empty, got {n_features}x{dim}"
            )));
        }
        if values.len() != n_features * dim {
            return Err(Error::Dimension { expected: n_features * dim, found: values.len() });
        }
        let mut sq_norms = Vec::with_capacity(n_features);
        for (row, chunk) in values.chunks_exact(dim).enumerate() {
            if let Some(col) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite value at row {row}, column {col}"
                )));
            }
            let sq = dot(chunk, chunk);
            if sq == 0.0 {
                return Err(Error::DegenerateVector { row: Some(row) });
            }
            sq_norms.push(sq);
        }
        Ok(Self { layer_id, n_features, dim, values, sq_norms })
    }

    /// Convenience constructor from nested rows; all rows must share a length.
    pub fn from_rows<R: AsRef<[f32]>>(layer_id: u32, rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension { expected: dim, found: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::new(layer_id, rows.len(), dim, values)
    }

    pub fn layer_id(&self) -> u32 {
        self.layer_id
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    /// Cosine distance between rows `i` and `j`, using cached norms.
    pub fn row_distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        cosine_from_parts(dot(self.row(a), self.row(b)), self.sq_norms[a], self.sq_norms[b])
    }

    /// A view of a subset of rows, addressed by local indices `0..indices.len()`.
    pub fn subset<'a>(&'a self, indices: &'a [usize]) -> Result<RowSubset<'a>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_features) {
            return Err(Error::Index { what: "feature", index: bad, len: self.n_features });
        }
        Ok(RowSubset { matrix: self, indices })
    }
}

impl MetricSpace for FeatureMatrix {
    fn len(&self) -> usize {
        self.n_features
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.row_distance(i, j)
    }
}

/// Rows of a [`FeatureMatrix`] selected by feature index.
#[derive(Debug, Clone, Copy)]
pub struct RowSubset<'a> {
    matrix: &'a FeatureMatrix,
    indices: &'a [usize],
}

impl RowSubset<'_> {
    pub fn feature_indices(&self) -> &[usize] {
        self.indices
    }
}

impl MetricSpace for RowSubset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.matrix.row_distance(self.indices[i], self.indices[j])
    }
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

/// `sqrt(|u|² |v|²)` rather than `|u| |v|` so that identical vectors give
/// exactly zero.
fn cosine_from_parts(uv: f64, uu: f64, vv: f64) -> f64 {
    (1.0 - uv / (uu * vv).sqrt()).clamp(0.0, 2.0)
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension { expected: u.len(), found: v.len() });
    }
    if u.is_empty() {
        return Err(Error::DegenerateVector { row: None });
    }
    // Canonical operand order keeps d(u, v) == d(v, u) bit-for-bit.
    let (a, b) = if u <= v { (u, v) } else { (v, u) };
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::DegenerateVector { row: None });
    }
    Ok(cosine_from_parts(dot(a, b), aa, bb))
}

/// Sorted sample of pairwise distances, used to pick the cover radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    /// Ascending cosine distances.
    pub values: Vec<f64>,
    /// Size of the population the sample was drawn from, `n(n-1)/2`.
    pub pair_count: u64,
    pub rng_seed: u64,
}

impl DistanceSample {
    pub fn is_exhaustive(&self) -> bool {
        self.values.len() as u64 == self.pair_count
    }
}

/// Maps a lexicographic pair rank in `0..n(n-1)/2` to `(i, j)` with `i < j`.
fn unrank_pair(rank: u64, n: u64) -> (usize, usize) {
    let row_start = |i: u64| i * (2 * n - i - 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * rank as f64;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor().max(0.0) as u64;
    i = i.min(n - 2);
    while i > 0 && row_start(i) > rank {
        i -= 1;
    }
    while i + 1 < n - 1 && row_start(i + 1) <= rank {
        i += 1;
    }
    let j = i + 1 + (rank - row_start(i));
    (i as usize, j as usize)
}

/// All pairwise distances when there are at most `max_pairs` of them,
/// otherwise a seeded uniform sample of `max_pairs` distinct pairs.
pub fn sample_pairwise_distances<M: MetricSpace + ?Sized>(
    points: &M,
    max_pairs: usize,
    seed: u64,
) -> Result<DistanceSample> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, found: n });
    }
    if max_pairs == 0 {
        return Err(Error::InvalidParameter("max_pairs must be at least 1".into()));
    }
    let total = (n as u64) * (n as u64 - 1) / 2;

    let mut values: Vec<f64> = if total <= max_pairs as u64 {
        (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..n).map(move |j| points.distance(i, j)))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranks = index::sample(&mut rng, total as usize, max_pairs).into_vec();
        ranks
            .into_par_iter()
            .map(|r| {
                let (i, j) = unrank_pair(r as u64, n as u64);
                points.distance(i, j)
            })
            .collect()
    };
    values.sort_by(f64::total_cmp);
    Ok(DistanceSample { values, pair_count: total, rng_seed: seed })
}

/// The `k` rows nearest to `query` by cosine distance, query excluded,
/// ties broken by smaller index.
pub fn k_nearest(m: &FeatureMatrix, query: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    let n = m.n_features();
    if query >= n {
        return Err(Error::Index { what: "feature", index: query, len: n });
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "k must satisfy 1 <= k < {n}, got {k}"
        )));
    }
    let mut scored: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .filter(|&i| i != query)
        .map(|i| (i, m.row_distance(query, i)))
        .collect();
    let by_distance = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance);
        scored.truncate(k);
    }
    scored.sort_by(by_distance);
    Ok(scored)
}
