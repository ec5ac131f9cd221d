//! Ball mapper construction.
//!
//! A greedy pass picks ball centers in ascending point order; every point then
//! joins each closed ball whose center lies within the radius. The nerve of
//! that cover (one node per ball, one edge per intersecting pair) is the
//! mapper graph. The adaptive variant shrinks the radius geometrically until
//! no ball holds more than `max_node_size` points.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{sample_pairwise_distances, DistanceSample, MetricSpace, DEFAULT_MAX_PAIRS};

pub const DEFAULT_ETA: f64 = 0.9;
pub const DEFAULT_MAX_NODE_SIZE: usize = 5;
pub const DEFAULT_MAX_SHRINK_ITERATIONS: usize = 200;
pub const DEFAULT_SEED: u64 = 42;

/// Radius used when the distance sample is too small for the elbow rule:
/// the diameter of the cosine metric, so a single ball covers everything.
pub const FALLBACK_EPSILON: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Epsilon {
    #[default]
    Auto,
    Fixed(f64),
}

impl std::fmt::Display for Epsilon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Epsilon::Auto => f.write_str("auto"),
            Epsilon::Fixed(e) => write!(f, "{e}"),
        }
    }
}

impl std::str::FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Epsilon::Auto);
        }
        let e: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("epsilon must be a number or \"auto\", got {s:?}")))?;
        Ok(Epsilon::Fixed(e))
    }
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Epsilon::Auto => s.serialize_str("auto"),
            Epsilon::Fixed(e) => s.serialize_f64(*e),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(e) => Ok(Epsilon::Fixed(e)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperParams {
    pub epsilon: Epsilon,
    pub eta: f64,
    pub max_node_size: usize,
    pub max_shrink_iterations: usize,
    /// Pair budget for the distance sample behind `Epsilon::Auto`.
    pub max_pairs: usize,
    /// Seed for the distance sample behind `Epsilon::Auto`.
    pub seed: u64,
}

impl Default for MapperParams {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::Auto,
            eta: DEFAULT_ETA,
            max_node_size: DEFAULT_MAX_NODE_SIZE,
            max_shrink_iterations: DEFAULT_MAX_SHRINK_ITERATIONS,
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: DEFAULT_SEED,
        }
    }
}

impl MapperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParameter(format!("eta must be in (0, 1), got {}", self.eta)));
        }
        if self.max_node_size == 0 {
            return Err(Error::InvalidParameter("max_node_size must be at least 1".into()));
        }
        if self.max_pairs == 0 {
            return Err(Error::InvalidParameter("max_pairs must be at least 1".into()));
        }
        if let Epsilon::Fixed(e) = self.epsilon {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

/// One node of the mapper graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    #[serde(rename = "id")]
    pub node_id: usize,
    pub center: usize,
    pub radius: f64,
    /// Ascending point indices.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub shared: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperGraph {
    pub epsilon_used: f64,
    pub shrink_iterations: usize,
    pub nodes: Vec<Ball>,
    pub edges: Vec<Edge>,
}

impl MapperGraph {
    pub fn max_node_size(&self) -> usize {
        self.nodes.iter().map(|b| b.members.len()).max().unwrap_or(0)
    }

    /// Renames point indices through `labels` (point `i` becomes `labels[i]`),
    /// e.g. from positions in a filtered subset back to feature indices.
    pub fn relabel(&self, labels: &[usize]) -> Result<MapperGraph> {
        let map = |i: usize| {
            labels.get(i).copied().ok_or(Error::Index { what: "point", index: i, len: labels.len() })
        };
        let nodes = self
            .nodes
            .iter()
            .map(|b| {
                let mut members = b.members.iter().map(|&m| map(m)).collect::<Result<Vec<_>>>()?;
                members.sort_unstable();
                Ok(Ball { node_id: b.node_id, center: map(b.center)?, radius: b.radius, members })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MapperGraph { nodes, edges: self.edges.clone(), ..*self })
    }

    /// Sorted adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

/// Greedy ε-net in ascending point order, then closed-ball membership.
pub fn greedy_cover<M: MetricSpace + ?Sized>(points: &M, epsilon: f64) -> Result<Vec<Ball>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InsufficientPoints { needed: 1, found: 0 });
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be non-negative, got {epsilon}")));
    }
    // Center selection is order-dependent and stays sequential.
    let mut centers: Vec<usize> = Vec::new();
    for p in 0..n {
        if centers.iter().all(|&c| points.distance(c, p) > epsilon) {
            centers.push(p);
        }
    }
    let balls = centers
        .par_iter()
        .enumerate()
        .map(|(node_id, &center)| Ball {
            node_id,
            center,
            radius: epsilon,
            members: (0..n).filter(|&p| points.distance(center, p) <= epsilon).collect(),
        })
        .collect();
    Ok(balls)
}

/// Nerve of a cover: edge `(a, b)`, `a < b`, iff the member sets intersect.
pub fn build_nerve(balls: Vec<Ball>) -> MapperGraph {
    let n_points = balls.iter().flat_map(|b| b.members.iter()).max().map_or(0, |&m| m + 1);
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); n_points];
    for ball in &balls {
        for &m in &ball.members {
            owners[m].push(ball.node_id);
        }
    }
    let mut shared: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for list in &owners {
        for (i, &a) in list.iter().enumerate() {
            for &b in &list[i + 1..] {
                let key = if a < b { (a, b) } else { (b, a) };
                *shared.entry(key).or_default() += 1;
            }
        }
    }
    let edges = shared.into_iter().map(|((a, b), shared)| Edge { a, b, shared }).collect();
    let epsilon_used = balls.first().map_or(0.0, |b| b.radius);
    MapperGraph { epsilon_used, shrink_iterations: 0, nodes: balls, edges }
}

/// Elbow of the sorted distance curve: the sample maximizing perpendicular
/// distance to the chord joining the first and last points.
pub fn estimate_epsilon(sample: &DistanceSample) -> Result<f64> {
    let d = &sample.values;
    if d.len() < 3 {
        return Err(Error::InsufficientPoints { needed: 3, found: d.len() });
    }
    let (first, last) = (d[0], d[d.len() - 1]);
    if first == last {
        return Ok(first);
    }
    // Chord distance scaled by the constant (N-1)·‖chord‖ so equal geometric
    // distances compare equal in floating point; ties keep the lower index.
    let span = (d.len() - 1) as f64;
    let rise = last - first;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &v) in d.iter().enumerate() {
        let dist = (rise * i as f64 - (v - first) * span).abs();
        if dist > best.1 {
            best = (i, dist);
        }
    }
    Ok(d[best.0])
}

/// Initial radius for the adaptive loop.
pub fn initial_epsilon<M: MetricSpace + ?Sized>(points: &M, params: &MapperParams) -> Result<f64> {
    match params.epsilon {
        Epsilon::Fixed(e) => Ok(e),
        Epsilon::Auto if points.len() < 2 => Ok(FALLBACK_EPSILON),
        Epsilon::Auto => {
            let sample = sample_pairwise_distances(points, params.max_pairs, params.seed)?;
            match estimate_epsilon(&sample) {
                Ok(e) => Ok(e),
                Err(Error::InsufficientPoints { .. }) => Ok(FALLBACK_EPSILON),
                Err(e) => Err(e),
            }
        }
    }
}

/// Cover + nerve with geometric radius shrinking until every ball holds at
/// most `max_node_size` points.
pub fn build_adaptive<M: MetricSpace + ?Sized>(points: &M, params: &MapperParams) -> Result<MapperGraph> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, found: 0 });
    }
    let mut epsilon = initial_epsilon(points, params)?;
    let mut largest_ball = 0;
    for k in 0..=params.max_shrink_iterations {
        let balls = greedy_cover(points, epsilon)?;
        largest_ball = balls.iter().map(|b| b.members.len()).max().unwrap_or(0);
        if largest_ball <= params.max_node_size {
            let mut graph = build_nerve(balls);
            graph.epsilon_used = epsilon;
            graph.shrink_iterations = k;
            return Ok(graph);
        }
        if k < params.max_shrink_iterations {
            epsilon *= params.eta;
        }
    }
    Err(Error::MaxIterations {
        iterations: params.max_shrink_iterations,
        largest_ball,
        max_node_size: params.max_node_size,
        epsilon,
    })
}

/// Cover + nerve at a single radius.
pub fn build_mapper<M: MetricSpace + ?Sized>(points: &M, epsilon: f64) -> Result<MapperGraph> {
    let mut graph = build_nerve(greedy_cover(points, epsilon)?);
    graph.epsilon_used = epsilon;
    Ok(graph)
}

/// Node-id sets of the connected components, each ascending, ordered by
/// their smallest node.
pub fn connected_components(g: &MapperGraph) -> Vec<Vec<usize>> {
    let adj = g.adjacency();
    let mut seen = vec![false; adj.len()];
    let mut components = Vec::new();
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut component = vec![start];
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    component.push(v);
                    stack.push(v);
                }
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    components
}

/// Unweighted BFS path from `from` to `to`; neighbors are expanded in
/// ascending id order so ties resolve toward smaller ids.
pub fn shortest_node_path(g: &MapperGraph, from: usize, to: usize) -> Result<Option<Vec<usize>>> {
    let n = g.nodes.len();
    for id in [from, to] {
        if id >= n {
            return Err(Error::Index { what: "node", index: id, len: n });
        }
    }
    let adj = g.adjacency();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            let mut path = vec![to];
            let mut cur = to;
            while let Some(p) = parent[cur] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Ok(Some(path));
        }
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    Ok(None)
}
