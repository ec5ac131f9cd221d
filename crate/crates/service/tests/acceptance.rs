//! Acceptance criteria A1 to A11. Each test prints one `PASS`/`FAIL` line.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use saescope_core::ballmapper::{DEFAULT_ETA, DEFAULT_MAX_NODE_SIZE};
use saescope_core::concepts::{category_overlap, retrieve_features, ConceptSet, DEFAULT_THRESHOLD};
use saescope_core::dataset::ingest;
use saescope_core::explore::{mapper_document, ConceptBundle, MapperRequest};
use saescope_core::ingestion::manifest::write_projection;
use saescope_core::layout::{ProjectionSource, DEFAULT_FORCE_ITERATIONS};
use saescope_core::pointcloud::DEFAULT_MAX_PAIRS;
use saescope_core::synthetic::{write_synthetic_dataset, SyntheticConfig};
use saescope_core::{
    build_adaptive, build_mapper, build_nerve, connected_components, estimate_epsilon, force_layout, greedy_cover,
    layout_pair, sample_pairwise_distances, ConceptVectors, Dataset, DistanceSample, Epsilon, Error,
    ExplanationEmbeddings, FeatureMatrix, MapperParams, Projection2D,
};
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn criterion(id: &str, title: &str, check: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let line = match &result {
        Ok(note) => format!("{id} PASS  {title}: {note} [{secs:.2}s]\n"),
        Err(why) => format!("{id} FAIL  {title}: {why} [{secs:.2}s]\n"),
    };
    // Bypasses the test harness capture so the line is always shown.
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    if let Err(why) = result {
        panic!("{id}: {why}");
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn matrix(rows: &[Vec<f32>]) -> FeatureMatrix {
    FeatureMatrix::from_rows(0, rows).unwrap()
}

/// Cosine distance written out independently of the library.
fn oracle_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

fn oracle_matrix(rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    rows.iter().map(|a| rows.iter().map(|b| oracle_distance(a, b)).collect()).collect()
}

/// Reference cover and nerve: centers in index order, closed balls, and an
/// edge for every pair of balls with a common member.
fn oracle_cover(d: &[Vec<f64>], eps: f64) -> (Vec<usize>, Vec<Vec<usize>>, BTreeMap<(usize, usize), usize>) {
    let n = d.len();
    let mut centers: Vec<usize> = Vec::new();
    for i in 0..n {
        if centers.iter().all(|&c| d[c][i] > eps) {
            centers.push(i);
        }
    }
    let members: Vec<Vec<usize>> = centers.iter().map(|&c| (0..n).filter(|&j| d[c][j] <= eps).collect()).collect();
    let mut edges = BTreeMap::new();
    for a in 0..members.len() {
        for b in a + 1..members.len() {
            let shared = members[a].iter().filter(|m| members[b].contains(m)).count();
            if shared > 0 {
                edges.insert((a, b), shared);
            }
        }
    }
    (centers, members, edges)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    let k = rng.random_range(1..=6);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| gaussian(rng, dim)).collect();
    let spread = rng.random_range(0.05..1.0);
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..k)];
            let noise = gaussian(rng, dim);
            c.iter().zip(&noise).map(|(a, b)| (a + spread * b) as f32).collect()
        })
        .collect()
}

#[test]
fn a01_cover_and_nerve_match_brute_force() {
    criterion("A1", "cover/nerve oracle equivalence", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut balls_seen, mut edges_seen) = (0, 0);
        for instance in 0..100 {
            let n = rng.random_range(1..=200);
            let dim = rng.random_range(2..=64);
            let mut rows = random_cloud(&mut rng, n, dim);
            if n > 3 && instance % 5 == 0 {
                rows[n - 1] = rows[0].clone();
            }
            let d = oracle_matrix(&rows);
            let mut all: Vec<f64> = d.iter().enumerate().flat_map(|(i, r)| r[i + 1..].to_vec()).collect();
            all.sort_by(f64::total_cmp);
            all.dedup();
            // A radius halfway between two consecutive distinct distances, so
            // no pair sits on the boundary.
            let eps = if all.len() < 2 {
                0.5
            } else {
                let q = rng.random_range(0.01..0.6);
                let mut i = ((all.len() - 1) as f64 * q) as usize;
                while i + 1 < all.len() && all[i + 1] - all[i] < 1e-9 {
                    i += 1;
                }
                if i + 1 == all.len() { all[i] + 0.01 } else { (all[i] + all[i + 1]) / 2.0 }
            };

            let m = matrix(&rows);
            let balls = greedy_cover(&m, eps).map_err(|e| e.to_string())?;
            let graph = build_nerve(balls);
            let (centers, members, edges) = oracle_cover(&d, eps);

            let got_centers: Vec<usize> = graph.nodes.iter().map(|b| b.center).collect();
            ensure!(got_centers == centers, "instance {instance}: centers differ");
            for (ball, expected) in graph.nodes.iter().zip(&members) {
                ensure!(&ball.members == expected, "instance {instance}: members of ball {} differ", ball.node_id);
                ensure!(ball.radius == eps, "instance {instance}: radius {}", ball.radius);
            }
            let covered: BTreeSet<usize> = graph.nodes.iter().flat_map(|b| b.members.iter().copied()).collect();
            ensure!(covered.len() == n, "instance {instance}: cover misses points");
            for (i, &a) in centers.iter().enumerate() {
                for &b in &centers[i + 1..] {
                    ensure!(d[a][b] > eps, "instance {instance}: centers {a},{b} too close");
                }
            }
            let got_edges: BTreeMap<(usize, usize), usize> =
                graph.edges.iter().map(|e| ((e.a, e.b), e.shared)).collect();
            ensure!(got_edges == edges, "instance {instance}: edge sets differ");
            balls_seen += centers.len();
            edges_seen += edges.len();
        }
        let elapsed = start.elapsed();
        ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
        Ok(format!("100 clouds, {balls_seen} balls, {edges_seen} edges identical to brute force"))
    });
}

#[test]
fn a02_adaptive_respects_max_node_size() {
    criterion("A2", "adaptive constraint", || {
        let defaults = MapperParams::default();
        ensure!(defaults.eta == 0.9 && DEFAULT_ETA == 0.9, "default eta {}", defaults.eta);
        ensure!(defaults.max_node_size == 5 && DEFAULT_MAX_NODE_SIZE == 5, "default max node size");
        ensure!(defaults.epsilon == Epsilon::Auto, "default epsilon");
        let request = MapperRequest::new(0);
        ensure!(request.eta == 0.9 && request.max_node_size == 5, "request defaults");

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut ok, mut failed) = (0, 0);
        for instance in 0..50u64 {
            let max_node_size = [1, 3, 5][instance as usize % 3];
            let n = rng.random_range(8..=120);
            let dim = rng.random_range(3..=32);
            let mut rows = random_cloud(&mut rng, n, dim);
            if instance % 2 == 1 {
                let group = rng.random_range(2..=7);
                let src = rng.random_range(0..n);
                for k in 0..group - 1 {
                    let dst = (src + 1 + k * 3) % n;
                    rows[dst] = rows[src].clone();
                }
            }
            let mut multiplicity: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
            for r in &rows {
                *multiplicity.entry(r.iter().map(|x| x.to_bits()).collect()).or_default() += 1;
            }
            let max_dup = multiplicity.values().copied().max().unwrap();

            let params = MapperParams { max_node_size, seed: instance, ..MapperParams::default() };
            match build_adaptive(&matrix(&rows), &params) {
                Ok(g) => {
                    ensure!(g.max_node_size() <= max_node_size, "instance {instance}: ball of {}", g.max_node_size());
                    ensure!(max_dup <= max_node_size, "instance {instance}: {max_dup} duplicates but succeeded");
                    ok += 1;
                }
                Err(Error::MaxIterations { .. }) => {
                    ensure!(max_dup > max_node_size, "instance {instance}: failed with only {max_dup} duplicates");
                    failed += 1;
                }
                Err(e) => return Err(format!("instance {instance}: {e}")),
            }
        }
        Ok(format!("50 instances: {ok} satisfied, {failed} failed only on duplicate groups; defaults eta 0.9, max 5"))
    });
}

struct Blobs {
    rows: Vec<Vec<f32>>,
    label: Vec<usize>,
}

fn two_blobs() -> Blobs {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 50;
    let c1 = unit(&gaussian(&mut rng, dim));
    let g = gaussian(&mut rng, dim);
    let along: f64 = g.iter().zip(&c1).map(|(a, b)| a * b).sum();
    let ortho = unit(&g.iter().zip(&c1).map(|(a, b)| a - along * b).collect::<Vec<_>>());
    // cos = 0.2, i.e. cosine distance 0.8 between the centers.
    let (cos, sin) = (0.2f64, (1.0f64 - 0.04).sqrt());
    let c2: Vec<f64> = c1.iter().zip(&ortho).map(|(a, b)| cos * a + sin * b).collect();
    let mut rows = Vec::new();
    let mut label = Vec::new();
    for (l, c) in [c1, c2].iter().enumerate() {
        for _ in 0..100 {
            let noise = gaussian(&mut rng, dim);
            rows.push(c.iter().zip(&noise).map(|(a, b)| (a + 0.02 * b) as f32).collect());
            label.push(l);
        }
    }
    Blobs { rows, label }
}

#[test]
fn a03_two_blobs_separate() {
    criterion("A3", "two-blob separation", || {
        let blobs = two_blobs();
        let m = matrix(&blobs.rows);
        let sample = sample_pairwise_distances(&m, DEFAULT_MAX_PAIRS, 42).map_err(|e| e.to_string())?;
        ensure!(sample.is_exhaustive(), "sample not exhaustive");
        let eps = estimate_epsilon(&sample).map_err(|e| e.to_string())?;
        let graph = build_mapper(&m, eps).map_err(|e| e.to_string())?;
        let components = connected_components(&graph);
        ensure!(components.len() == 2, "{} components at epsilon {eps}", components.len());
        for comp in &components {
            let labels: BTreeSet<usize> =
                comp.iter().flat_map(|&node| graph.nodes[node].members.iter().map(|&p| blobs.label[p])).collect();
            ensure!(labels.len() == 1, "a component mixes blobs");
        }
        let whole = build_mapper(&m, 2.0).map_err(|e| e.to_string())?;
        ensure!(whole.nodes.len() == 1, "{} balls at epsilon 2", whole.nodes.len());
        Ok(format!("epsilon {eps:.5}: 2 components ({} balls); epsilon 2.0: 1 ball", graph.nodes.len()))
    });
}

fn adversarial(projection_len: usize, rows: &[Vec<f32>], subset: &[usize]) -> Vec<[f64; 2]> {
    // Every point on a ring in a scrambled order; the closest pair of the
    // subset goes to opposite ends of the frame.
    let mut coords: Vec<[f64; 2]> = (0..projection_len)
        .map(|i| {
            let t = ((i * 7919) % projection_len) as f64 / projection_len as f64 * std::f64::consts::TAU;
            [10.0 * t.cos(), 10.0 * t.sin()]
        })
        .collect();
    let (mut best, mut pair) = (f64::INFINITY, (0, 0));
    for (k, &i) in subset.iter().enumerate() {
        for &j in &subset[k + 1..] {
            let d = oracle_distance(&rows[i], &rows[j]);
            if d < best {
                best = d;
                pair = (i, j);
            }
        }
    }
    coords[pair.0] = [-100.0, 0.0];
    coords[pair.1] = [100.0, 0.0];
    coords
}

#[test]
fn a04_graph_ignores_projection() {
    criterion("A4", "projection independence", || {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        let paths = write_synthetic_dataset(&raw, &SyntheticConfig::default()).unwrap();
        let bundle = ConceptBundle::load(&paths.concepts, None).map_err(|e| e.to_string())?;
        let base = Dataset::load(&paths.manifest).map_err(|e| e.to_string())?;
        let layer = base.layer(0).unwrap();
        let rows: Vec<Vec<f32>> = layer.features.rows().map(<[f32]>::to_vec).collect();
        let table = retrieve_features(&layer.embeddings, &bundle.set, &bundle.vectors, DEFAULT_THRESHOLD)
            .map_err(|e| e.to_string())?;
        let subset: Vec<usize> = table.feature_indices().into_iter().collect();

        let mut manifest: Value = serde_json::from_str(&std::fs::read_to_string(&paths.manifest).unwrap()).unwrap();
        let hostile = Projection2D::new(0, ProjectionSource::Precomputed, adversarial(rows.len(), &rows, &subset))
            .map_err(|e| e.to_string())?;
        write_projection(raw.join("hostile.projection.json"), &hostile).map_err(|e| e.to_string())?;

        let mut variants = Vec::new();
        for (name, projection) in [("pca", None), ("hostile", Some("hostile.projection.json"))] {
            let entry = &mut manifest["layers"][0];
            match projection {
                Some(p) => entry["projection_path"] = Value::from(p),
                None => {
                    entry.as_object_mut().unwrap().remove("projection_path");
                }
            }
            manifest["name"] = Value::from(name);
            let path = raw.join(format!("{name}.manifest.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
            let summary = ingest(&path, dir.path().join("data")).map_err(|e| e.to_string())?;
            let ds = Dataset::load(summary.destination.join("manifest.json")).map_err(|e| e.to_string())?;
            let t = retrieve_features(&ds.layer(0).unwrap().embeddings, &bundle.set, &bundle.vectors, DEFAULT_THRESHOLD)
                .map_err(|e| e.to_string())?;
            let doc = mapper_document(&ds, &t, &bundle.set, &MapperRequest::new(0)).map_err(|e| e.to_string())?;
            variants.push((ds.layer(0).unwrap().has_precomputed_projection(), doc));
        }
        let (pca, hostile_doc) = (&variants[0], &variants[1]);
        ensure!(!pca.0 && hostile_doc.0, "variants did not use the intended projections");
        let a = serde_json::to_vec(&pca.1.graph).unwrap();
        let b = serde_json::to_vec(&hostile_doc.1.graph).unwrap();
        ensure!(a == b, "serialized graphs differ");
        ensure!(pca.1.layouts.anchored != hostile_doc.1.layouts.anchored, "anchored layouts should differ");

        // Two true nearest neighbors drawn far apart still share a node.
        let mut small: Vec<Vec<f32>> = (0..6)
            .map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.05 * ((i * 6 + j) % 5) as f32 }).collect())
            .collect();
        small.insert(1, {
            let mut v = small[0].clone();
            v[1] += 0.001;
            v
        });
        let coords = vec![[-50.0, 0.0], [50.0, 0.0], [-40.0, 1.0], [0.0, 0.0], [1.0, 1.0], [40.0, 1.0], [2.0, -1.0]];
        let far = Projection2D::new(0, ProjectionSource::Precomputed, coords.clone()).unwrap();
        let m = matrix(&small);
        let d = oracle_matrix(&small);
        let nn0 = (1..small.len()).min_by(|&a, &b| d[0][a].total_cmp(&d[0][b])).unwrap();
        ensure!(nn0 == 1, "fixture: nearest neighbor of 0 is {nn0}");
        let planar = |i: usize, j: usize| ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
        let nn0_2d = (1..small.len()).min_by(|&a, &b| planar(0, a).total_cmp(&planar(0, b))).unwrap();
        ensure!(nn0_2d != 1, "fixture: neighbors are not separated in 2D");
        let g = build_adaptive(&m, &MapperParams::default()).map_err(|e| e.to_string())?;
        ensure!(g.nodes.iter().any(|b| b.members.contains(&0) && b.members.contains(&1)), "neighbors split");
        layout_pair(&g, &far, 42, DEFAULT_FORCE_ITERATIONS).map_err(|e| e.to_string())?;
        Ok(format!(
            "{} byte-identical graph bytes under PCA and hostile projections; separated neighbors share a node",
            a.len()
        ))
    });
}

fn synthetic_tables(threshold: f64) -> (Dataset, ConceptBundle, Vec<saescope_core::AssignmentTable>) {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_synthetic_dataset(dir.path(), &SyntheticConfig::default()).unwrap();
    let dataset = Dataset::load(&paths.manifest).unwrap();
    let bundle = ConceptBundle::load(&paths.concepts, None).unwrap();
    let tables = dataset
        .layers
        .iter()
        .map(|l| retrieve_features(&l.embeddings, &bundle.set, &bundle.vectors, threshold).unwrap())
        .collect();
    (dataset, bundle, tables)
}

#[test]
fn a05_retrieval_threshold_semantics() {
    criterion("A5", "retrieval semantics", || {
        ensure!(DEFAULT_THRESHOLD == 0.5, "default threshold {DEFAULT_THRESHOLD}");

        let set = ConceptSet::from_json_str(r#"{"name":"b","categories":[{"name":"c","concepts":["w"]}]}"#).unwrap();
        let mut vectors = ConceptVectors::new(4);
        vectors.insert("w", &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let rows = [[1.0f32, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 0.99]];
        let emb = ExplanationEmbeddings::new(
            0,
            4,
            vec![Some("on the boundary".into()), Some("just above".into())],
            rows.iter().map(|r| Some(&r[..])).collect(),
        )
        .unwrap();
        let at = retrieve_features(&emb, &set, &vectors, 0.5).unwrap();
        let features: Vec<usize> = at.rows.iter().map(|r| r.feature_index).collect();
        ensure!(features == [1], "similarity exactly 0.5 must be excluded, got {features:?}");
        let below = retrieve_features(&emb, &set, &vectors, 0.4999).unwrap();
        ensure!(below.rows.len() == 2, "both features should pass 0.4999");

        let pairs = |t: f64| -> Vec<BTreeSet<(usize, usize)>> {
            synthetic_tables(t).2.iter().map(|t| t.rows.iter().map(|r| (r.concept_id, r.feature_index)).collect()).collect()
        };
        let (low, mid, high) = (pairs(0.3), pairs(0.5), pairs(0.7));
        let mut sizes = Vec::new();
        for layer in 0..low.len() {
            ensure!(mid[layer].is_subset(&low[layer]), "layer {layer}: 0.5 not within 0.3");
            ensure!(high[layer].is_subset(&mid[layer]), "layer {layer}: 0.7 not within 0.5");
            sizes.push(format!("{}/{}/{}", low[layer].len(), mid[layer].len(), high[layer].len()));
        }
        ensure!(low[0].len() > high[0].len(), "threshold had no effect");
        Ok(format!("boundary excluded; assignments at 0.3/0.5/0.7 per layer: {}", sizes.join(", ")))
    });
}

#[test]
fn a06_category_overlap() {
    criterion("A6", "category overlap", || {
        let (_, bundle, tables) = synthetic_tables(DEFAULT_THRESHOLD);
        let set = &bundle.set;
        let mut checked = 0;
        for table in &tables {
            let by_cat = table.features_by_category(set);
            for a in 0..set.categories.len() {
                for b in 0..set.categories.len() {
                    let ab = category_overlap(table, set, a, b).unwrap();
                    let ba = category_overlap(table, set, b, a).unwrap();
                    ensure!(ab == ba, "overlap({a},{b}) = {ab} but overlap({b},{a}) = {ba}");
                    ensure!(ab <= by_cat[a].len().min(by_cat[b].len()), "overlap exceeds a count");
                    if a == b {
                        ensure!(ab == by_cat[a].len(), "self overlap");
                    }
                    checked += 1;
                }
            }
        }
        let food = set.category_by_name("food").unwrap().category_id;
        let animal = set.category_by_name("animal").unwrap().category_id;
        let by_cat = tables[0].features_by_category(set);
        let both: BTreeSet<usize> = by_cat[food].intersection(&by_cat[animal]).copied().collect();
        ensure!(both.contains(&0) && both.contains(&1), "sugar/bee features missing from food and animal: {both:?}");
        let n = category_overlap(&tables[0], set, food, animal).unwrap();
        ensure!(n == both.len(), "overlap count {n} vs intersection {}", both.len());
        Ok(format!("{checked} category pairs; food and animal share {n} features including the sugar/bee pair"))
    });
}

#[test]
fn a07_layouts_are_exact() {
    criterion("A7", "layout exactness", || {
        let (dataset, bundle, tables) = synthetic_tables(DEFAULT_THRESHOLD);
        let mut nodes = 0;
        for (table, layer) in tables.iter().zip(&dataset.layers) {
            let doc = mapper_document(&dataset, table, &bundle.set, &MapperRequest::new(layer.layer_id))
                .map_err(|e| e.to_string())?;
            let projection = layer.projection().unwrap();
            for (ball, pos) in doc.graph.nodes.iter().zip(&doc.layouts.anchored.positions) {
                let k = ball.members.len() as f64;
                let cx = ball.members.iter().map(|&m| projection.coords[m][0]).sum::<f64>() / k;
                let cy = ball.members.iter().map(|&m| projection.coords[m][1]).sum::<f64>() / k;
                ensure!((pos[0] - cx).abs() <= 1e-9 && (pos[1] - cy).abs() <= 1e-9, "node {} off centroid", ball.node_id);
            }
            let again = force_layout(&doc.graph, 42, DEFAULT_FORCE_ITERATIONS).map_err(|e| e.to_string())?;
            let first = force_layout(&doc.graph, 42, DEFAULT_FORCE_ITERATIONS).map_err(|e| e.to_string())?;
            let bits = |p: &[[f64; 2]]| p.iter().flat_map(|q| [q[0].to_bits(), q[1].to_bits()]).collect::<Vec<_>>();
            ensure!(bits(&again.positions) == bits(&first.positions), "force layout not reproducible");
            let all = doc.layouts.anchored.positions.iter().chain(&doc.layouts.force.positions).chain(&first.positions);
            ensure!(all.flat_map(|p| p.iter()).all(|x| x.is_finite()), "non-finite position");
            nodes += doc.graph.nodes.len();
        }
        Ok(format!("{nodes} nodes: centroids within 1e-9, force layout bit-identical, all finite"))
    });
}

fn histogram_mode(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let bins = 64;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let best = (0..bins).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
    lo + (best as f64 + 0.5) * width
}

#[test]
fn a08_elbow_between_modes() {
    criterion("A8", "elbow estimator", || {
        let blobs = two_blobs();
        let m = matrix(&blobs.rows);
        let sample = sample_pairwise_distances(&m, DEFAULT_MAX_PAIRS, 42).map_err(|e| e.to_string())?;
        let eps = estimate_epsilon(&sample).map_err(|e| e.to_string())?;
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..blobs.rows.len() {
            for j in i + 1..blobs.rows.len() {
                let d = oracle_distance(&blobs.rows[i], &blobs.rows[j]);
                if blobs.label[i] == blobs.label[j] { intra.push(d) } else { inter.push(d) }
            }
        }
        let (lo, hi) = (histogram_mode(&intra), histogram_mode(&inter));
        ensure!(lo < eps && eps < hi, "epsilon {eps} not strictly between modes {lo} and {hi}");

        let constant = DistanceSample { values: vec![0.37; 40], pair_count: 40, rng_seed: 0 };
        let c = estimate_epsilon(&constant).map_err(|e| e.to_string())?;
        ensure!(c == 0.37, "constant sample gave {c}");
        let basis: Vec<Vec<f32>> = (0..10).map(|i| (0..10).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let s = sample_pairwise_distances(&matrix(&basis), DEFAULT_MAX_PAIRS, 1).map_err(|e| e.to_string())?;
        let b = estimate_epsilon(&s).map_err(|e| e.to_string())?;
        ensure!(b == 1.0, "orthonormal basis gave {b}");
        Ok(format!("intra mode {lo:.4} < epsilon {eps:.4} < inter mode {hi:.4}; constant samples return the constant"))
    });
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = common::cli(args);
    if out.status.code() == Some(0) {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(data: &Path, cache: &Path, out: &Path) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
    std::fs::create_dir_all(out).unwrap();
    let base = ["--data-dir", common::path_str(data), "--cache-dir", common::path_str(cache), "--seed", "42"];
    let assignments = out.join("assignments.json");
    let graph = out.join("graph.json");
    let whole = out.join("whole.json");
    fn with<'a>(base: &[&'a str], rest: &[&'a str]) -> Vec<&'a str> {
        base.iter().chain(rest).copied().collect()
    }
    run_cli(&with(&base, &[
        "precompute", "--dataset", "synthetic", "--concepts", "synthetic-things", "--threshold", "0.5",
        "--out", common::path_str(&assignments),
    ]))?;
    run_cli(&with(&base, &[
        "export-mapper", "--dataset", "synthetic", "--layer", "0", "--categories", "food,animal",
        "--epsilon", "auto", "--eta", "0.9", "--max-node-size", "5", "--out", common::path_str(&graph),
    ]))?;
    run_cli(&with(&base, &["export-mapper", "--dataset", "synthetic", "--layer", "1", "--out", common::path_str(&whole)]))?;
    Ok((std::fs::read(assignments).unwrap(), std::fs::read(graph).unwrap(), std::fs::read(whole).unwrap()))
}

#[test]
fn a09_end_to_end_determinism() {
    criterion("A9", "end-to-end determinism", || {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        run_cli(&[
            "--data-dir", common::path_str(&data), "synth", "--out", common::path_str(&dir.path().join("raw")), "--install",
        ])?;
        let first = pipeline(&data, &dir.path().join("cache1"), &dir.path().join("run1"))?;
        let second = pipeline(&data, &dir.path().join("cache2"), &dir.path().join("run2"))?;
        let cached = pipeline(&data, &dir.path().join("cache1"), &dir.path().join("run3"))?;
        ensure!(first == second, "fresh runs differ");
        ensure!(first == cached, "cached run differs");

        let mut config = saescope::ServiceConfig::new(&data);
        config.cache_dir = Some(dir.path().join("cache3"));
        let router = saescope::router(std::sync::Arc::new(saescope::AppState::load(config).map_err(|e| e.to_string())?));
        let rt = tokio::runtime::Runtime::new().unwrap();
        let (api_graph, api_whole) = rt.block_on(async {
            (
                common::get(&router, "/api/layers/0/mapper?categories=food,animal&epsilon=auto&eta=0.9&max_node_size=5").await,
                common::get(&router, "/api/layers/1/mapper").await,
            )
        });
        ensure!(api_graph.bytes == first.1, "API layer 0 mapper differs from the CLI export");
        ensure!(api_whole.bytes == first.2, "API layer 1 mapper differs from the CLI export");
        Ok(format!(
            "3 CLI runs byte-identical ({} + {} + {} bytes); API matches both exports",
            first.0.len(),
            first.1.len(),
            first.2.len()
        ))
    });
}

#[test]
fn a10_concept_set_shapes() {
    criterion("A10", "concept-set loading", || {
        let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let things = ConceptSet::load(fixtures.join("things_like.csv")).map_err(|e| e.to_string())?;
        ensure!(things.concepts.len() == 1448, "{} concepts", things.concepts.len());
        ensure!(things.categories.len() == 53, "{} categories", things.categories.len());
        let subjects = ConceptSet::load(fixtures.join("subjects_like.json")).map_err(|e| e.to_string())?;
        ensure!(subjects.concepts.len() == 1683, "{} concepts", subjects.concepts.len());
        ensure!(subjects.categories.len() == 8, "{} disciplines", subjects.categories.len());
        let multi = things.concepts.iter().filter(|c| things.categories_of(c.concept_id).count() > 1).count();
        Ok(format!("1448 concepts / 53 categories ({multi} in several); 1683 concepts / 8 disciplines"))
    });
}

const CONTRACT: &[(&str, &str)] = &[
    ("/api/health", "health"),
    ("/api/datasets", "datasets"),
    ("/api/concept-sets", "concept_sets"),
    ("/api/session", "retrieval"),
    ("/api/layers/0/categories", "categories"),
    ("/api/layers/0/categories?pinned=food", "categories"),
    ("/api/layers/1/categories?pinned=animal", "categories"),
    ("/api/layers/0/points", "points"),
    ("/api/layers/1/points?categories=food,animal", "points"),
    ("/api/layers/0/mapper", "mapper"),
    ("/api/layers/0/mapper?categories=food,animal", "mapper"),
    ("/api/layers/1/mapper?categories=plant&epsilon=0.3&eta=0.8&max_node_size=3", "mapper"),
    ("/api/layers/0/features/0", "feature"),
    ("/api/layers/0/features/12", "feature"),
    ("/api/layers/1/features/159", "feature"),
    ("/api/layers/0/search?q=", "search"),
    ("/api/layers/0/search?q=fox", "search"),
    ("/api/layers/0/path?from=0&to=0", "path"),
    ("/api/layers/0/path?from=0&to=5", "path"),
    ("/api/layers/7/points", "error"),
    ("/api/layers/0/features/999", "error"),
    ("/api/layers/0/mapper?eta=2", "error"),
];

fn contract_run() -> Result<Vec<Vec<u8>>, String> {
    let env = common::synthetic();
    let state = env.state();
    if state.config.ui_dir.is_some() {
        return Err("suite must run without a web UI".into());
    }
    let router = saescope::router(state);
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let mut bodies = Vec::new();
        let retrieval = common::post(&router, "/api/retrieval", r#"{"dataset":"synthetic","concept_set":"synthetic-things"}"#).await;
        common::assert_schema("retrieval", &retrieval.json());
        bodies.push(retrieval.bytes);
        let bad = common::post(&router, "/api/retrieval", r#"{"dataset":"synthetic","concept_set":"synthetic-things","threshold":7}"#).await;
        common::assert_schema("error", &bad.json());
        bodies.push(bad.bytes);
        for (uri, schema) in CONTRACT {
            let reply = common::get(&router, uri).await;
            let ok = reply.status.is_success();
            if ok != (*schema != "error") {
                return Err(format!("{uri}: unexpected status {}", reply.status));
            }
            let validator = common::schema(schema);
            let value = reply.json();
            if let Some(e) = validator.iter_errors(&value).next() {
                return Err(format!("{uri}: {e} at {}", e.instance_path));
            }
            bodies.push(reply.bytes);
        }
        Ok(bodies)
    })
}

#[test]
fn a11_service_contract() {
    criterion("A11", "service contract", || {
        let first = contract_run()?;
        let second = contract_run()?;
        for (i, (a, b)) in first.iter().zip(&second).enumerate() {
            ensure!(a == b, "response {i} changed between runs");
        }
        Ok(format!("{} requests schema-valid and byte-stable across two fresh runs, no web UI", first.len()))
    });
}
