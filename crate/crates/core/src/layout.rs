//! 2D projections of a layer and node layouts for mapper graphs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ballmapper::MapperGraph;
use crate::error::{Error, Result};
use crate::pointcloud::FeatureMatrix;

pub const DEFAULT_FORCE_ITERATIONS: usize = 300;
/// Ideal edge length for a single node in a unit-area frame.
pub const BASE_EDGE_LENGTH: f64 = 30.0;
pub const MIN_NODE_DISTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionSource {
    Precomputed,
    PrincipalComponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub layer_id: u32,
    pub source: ProjectionSource,
    pub coords: Vec<[f64; 2]>,
}

impl Projection2D {
    pub fn new(layer_id: u32, source: ProjectionSource, coords: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(row) = coords.iter().position(|c| !(c[0].is_finite() && c[1].is_finite())) {
            return Err(Error::Validation(format!("non-finite projection coordinate at row {row}")));
        }
        Ok(Self { layer_id, source, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Flips `v` so its first clearly nonzero component is positive.
fn canonical_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > scale * 1e-9) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue (stable on ties).
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Projects mean-centered rows onto the top two principal axes.
///
/// Works on whichever of the covariance (`dim x dim`) or Gram (`n x n`)
/// matrix is smaller; both yield the same axes.
pub fn principal_components_2d(m: &FeatureMatrix) -> Result<Projection2D> {
    let (n, d) = (m.n_features(), m.dim());
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, found: n });
    }
    let mut x = DMatrix::from_row_iterator(n, d, m.values().iter().map(|&v| f64::from(v)));
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let scale = x.amax();
    let tol = scale * scale * 1e-12 * (n.max(d) as f64);

    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2);
    if d <= n {
        for (lambda, mut v) in sorted_eigen(x.transpose() * &x).into_iter().take(2) {
            if lambda <= tol {
                break;
            }
            canonical_sign(&mut v);
            axes.push(v);
        }
    } else {
        for (lambda, u) in sorted_eigen(&x * x.transpose()).into_iter().take(2) {
            if lambda <= tol {
                break;
            }
            let u = nalgebra::DVector::from_vec(u);
            let mut v: Vec<f64> = (x.transpose() * u).normalize().iter().copied().collect();
            canonical_sign(&mut v);
            axes.push(v);
        }
    }

    let coords = (0..n)
        .map(|i| {
            let row = x.row(i);
            let mut c = [0.0; 2];
            for (k, axis) in axes.iter().enumerate() {
                c[k] = row.iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            c
        })
        .collect();
    Projection2D::new(m.layer_id(), ProjectionSource::PrincipalComponents, coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    Anchored,
    Force,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutResult {
    pub mode: LayoutMode,
    /// Indexed by node id.
    pub positions: Vec<[f64; 2]>,
    pub seed: Option<u64>,
    pub iterations_run: usize,
}

impl LayoutResult {
    pub fn bounding_box(&self) -> Option<([f64; 2], [f64; 2])> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        }))
    }
}

/// Each node sits at the centroid of its members' projected coordinates.
/// Member indices must address rows of `projection`.
pub fn anchored_layout(g: &MapperGraph, projection: &Projection2D) -> Result<LayoutResult> {
    let positions = g
        .nodes
        .iter()
        .map(|ball| {
            let mut sum = [0.0f64; 2];
            for &m in &ball.members {
                let c = projection.coords.get(m).ok_or(Error::Index {
                    what: "projection row",
                    index: m,
                    len: projection.len(),
                })?;
                sum[0] += c[0];
                sum[1] += c[1];
            }
            let n = ball.members.len().max(1) as f64;
            Ok([sum[0] / n, sum[1] / n])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayoutResult { mode: LayoutMode::Anchored, positions, seed: None, iterations_run: 0 })
}

/// Unit direction for two coincident nodes, fixed by their ids.
fn tiebreak_direction(i: usize, j: usize) -> [f64; 2] {
    const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
    let theta = (i * 7919 + j) as f64 * GOLDEN_ANGLE;
    [theta.cos(), theta.sin()]
}

/// Spring embedder: repulsion `k²/d` between every node pair, attraction
/// `d²/k` along edges, displacement capped by a temperature that cools
/// linearly to zero. Starts from seeded uniform positions in the unit square.
pub fn force_layout(g: &MapperGraph, seed: u64, iterations: usize) -> Result<LayoutResult> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    let n = g.nodes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    if n < 2 {
        return Ok(LayoutResult { mode: LayoutMode::Force, positions: pos, seed: Some(seed), iterations_run: iterations });
    }

    let k = BASE_EDGE_LENGTH * (1.0 / n as f64).sqrt();
    let k2 = k * k;
    let initial_temp = k;
    let mut disp = vec![[0.0f64; 2]; n];

    let separation = |pos: &[[f64; 2]], i: usize, j: usize| {
        let dx = pos[i][0] - pos[j][0];
        let dy = pos[i][1] - pos[j][1];
        let len = (dx * dx + dy * dy).sqrt();
        let dir = if len > 0.0 { [dx / len, dy / len] } else { tiebreak_direction(i, j) };
        (dir, len.max(MIN_NODE_DISTANCE))
    };

    for step in 0..iterations {
        let temp = initial_temp * (1.0 - step as f64 / iterations as f64);
        disp.iter_mut().for_each(|d| *d = [0.0; 2]);

        for i in 0..n {
            for j in i + 1..n {
                let (dir, d) = separation(&pos, i, j);
                let f = k2 / d;
                disp[i][0] += dir[0] * f;
                disp[i][1] += dir[1] * f;
                disp[j][0] -= dir[0] * f;
                disp[j][1] -= dir[1] * f;
            }
        }
        for e in &g.edges {
            let (dir, d) = separation(&pos, e.a, e.b);
            let f = d * d / k;
            disp[e.a][0] -= dir[0] * f;
            disp[e.a][1] -= dir[1] * f;
            disp[e.b][0] += dir[0] * f;
            disp[e.b][1] += dir[1] * f;
        }
        for (p, d) in pos.iter_mut().zip(&disp) {
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len > 0.0 && len.is_finite() {
                let step = len.min(temp) / len;
                p[0] += d[0] * step;
                p[1] += d[1] * step;
            }
        }
    }
    Ok(LayoutResult { mode: LayoutMode::Force, positions: pos, seed: Some(seed), iterations_run: iterations })
}

/// Uniformly scales and centers `positions` into the box `[lo, hi]`.
fn fit_into(positions: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2]) -> Vec<[f64; 2]> {
    let Some(first) = positions.first() else { return Vec::new() };
    let (flo, fhi) = positions.iter().fold((*first, *first), |(a, b), p| {
        ([a[0].min(p[0]), a[1].min(p[1])], [b[0].max(p[0]), b[1].max(p[1])])
    });
    let scale = (0..2)
        .filter(|&ax| fhi[ax] > flo[ax])
        .map(|ax| (hi[ax] - lo[ax]) / (fhi[ax] - flo[ax]))
        .fold(f64::INFINITY, f64::min);
    let scale = if scale.is_finite() { scale } else { 0.0 };
    let target = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let source = [(flo[0] + fhi[0]) / 2.0, (flo[1] + fhi[1]) / 2.0];
    positions
        .iter()
        .map(|p| {
            let mut q = [0.0; 2];
            for ax in 0..2 {
                q[ax] = (target[ax] + scale * (p[ax] - source[ax])).clamp(lo[ax], hi[ax]);
            }
            q
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPair {
    pub anchored: LayoutResult,
    pub force: LayoutResult,
}

impl LayoutPair {
    /// `(1 - t) * anchored + t * force` for every node.
    pub fn interpolate(&self, t: f64) -> Vec<[f64; 2]> {
        self.anchored
            .positions
            .iter()
            .zip(&self.force.positions)
            .map(|(a, f)| [(1.0 - t) * a[0] + t * f[0], (1.0 - t) * a[1] + t * f[1]])
            .collect()
    }
}

/// Anchored layout plus a force layout rescaled into the anchored bounding box.
pub fn layout_pair(g: &MapperGraph, projection: &Projection2D, seed: u64, iterations: usize) -> Result<LayoutPair> {
    let anchored = anchored_layout(g, projection)?;
    let mut force = force_layout(g, seed, iterations)?;
    if let Some((lo, hi)) = anchored.bounding_box() {
        force.positions = fit_into(&force.positions, lo, hi);
    }
    Ok(LayoutPair { anchored, force })
}
