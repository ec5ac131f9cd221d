//! Small seeded dataset for demos and tests: two layers of clustered SAE
//! features whose explanations embed near a handful of concept words.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::concepts::{ConceptSet, ConceptVectors};
use crate::error::{Error, Result};
use crate::explore::concept_set_document;
use crate::ingestion::explanations::{to_json_lines, ExplanationRecord};
use crate::ingestion::manifest::{write_projection, DatasetManifest, LayerEntry};
use crate::ingestion::matrix;
use crate::layout::{principal_components_2d, Projection2D, ProjectionSource};
use crate::pointcloud::FeatureMatrix;

pub const CATEGORIES: &[(&str, &[&str])] = &[
    ("food", &["sugar", "honey", "bread", "apple", "cheese"]),
    ("animal", &["bee", "dog", "cat", "fox", "wolf"]),
    ("plant", &["foxglove", "rose", "oak"]),
    ("electronic devices", &["phone", "laptop", "radio"]),
    ("media", &["album", "news"]),
];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub name: String,
    pub layers: Vec<u32>,
    pub features_per_layer: usize,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            layers: vec![0, 1],
            features_per_layer: 160,
            feature_dim: 32,
            embedding_dim: 24,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPaths {
    pub manifest: PathBuf,
    pub concepts: PathBuf,
    pub concept_vectors: PathBuf,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn add_scaled(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn concept_set() -> ConceptSet {
    let categories: Vec<serde_json::Value> = CATEGORIES
        .iter()
        .map(|(name, words)| serde_json::json!({ "name": name, "concepts": words }))
        .collect();
    let doc = serde_json::json!({ "name": "synthetic-things", "categories": categories });
    ConceptSet::from_json_str(&doc.to_string()).expect("built-in concept set is valid")
}

/// What one synthetic feature stands for.
enum Role {
    Concept(usize),
    Boundary(usize, usize),
    Unrelated,
}

/// Writes the dataset files, concept set and concept vectors into `dir`.
pub fn write_synthetic_dataset(dir: impl AsRef<Path>, config: &SyntheticConfig) -> Result<SyntheticPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let set = concept_set();
    let n_concepts = set.concepts.len();

    let concept_embeddings: Vec<Vec<f64>> = (0..n_concepts).map(|_| unit(gaussian(&mut rng, config.embedding_dim))).collect();
    let concept_directions: Vec<Vec<f64>> = (0..n_concepts).map(|_| unit(gaussian(&mut rng, config.feature_dim))).collect();

    let mut vectors = ConceptVectors::new(config.embedding_dim);
    for c in &set.concepts {
        let v: Vec<f32> = concept_embeddings[c.concept_id].iter().map(|&x| x as f32).collect();
        vectors.insert(&c.word, &v)?;
    }
    let word = |id: usize| set.concepts[id].word.as_str();
    let sugar = set.concept_by_word("sugar").expect("built-in").concept_id;
    let bee = set.concept_by_word("bee").expect("built-in").concept_id;

    let mut entries = Vec::new();
    for (li, &layer) in config.layers.iter().enumerate() {
        // Later layers lose a few concepts entirely.
        let active: Vec<usize> = (0..n_concepts).filter(|&c| li == 0 || c % (li + 4) != 1).collect();
        let n = config.features_per_layer;
        let mut features = Vec::with_capacity(n * config.feature_dim);
        let mut embeddings = Vec::with_capacity(n * config.embedding_dim);
        let mut records = Vec::new();
        for f in 0..n {
            let role = match f {
                0 | 1 => Role::Boundary(sugar, bee),
                _ if f % 7 == 3 => Role::Unrelated,
                _ if f % 11 == 5 => {
                    let a = active[rng.random_range(0..active.len())];
                    let b = active[rng.random_range(0..active.len())];
                    if a == b { Role::Concept(a) } else { Role::Boundary(a, b) }
                }
                _ => Role::Concept(active[f % active.len()]),
            };
            let (direction, embedding, text) = match role {
                Role::Concept(c) => (
                    add_scaled(&concept_directions[c], &gaussian(&mut rng, config.feature_dim), 0.08),
                    add_scaled(&concept_embeddings[c], &gaussian(&mut rng, config.embedding_dim), 0.09),
                    format!("mentions of {}", word(c)),
                ),
                Role::Boundary(a, b) => {
                    let mid = add_scaled(&concept_directions[a], &concept_directions[b], 1.0);
                    let emb = add_scaled(&concept_embeddings[a], &concept_embeddings[b], 1.0);
                    (
                        add_scaled(&mid, &gaussian(&mut rng, config.feature_dim), 0.08),
                        add_scaled(&emb, &gaussian(&mut rng, config.embedding_dim), 0.05),
                        format!("{} and {}", word(a), word(b)),
                    )
                }
                Role::Unrelated => (
                    gaussian(&mut rng, config.feature_dim),
                    gaussian(&mut rng, config.embedding_dim),
                    format!("miscellaneous token pattern {f}"),
                ),
            };
            features.extend(direction.iter().map(|&x| x as f32));
            // Every 13th feature has no explanation at all.
            if f % 13 == 12 {
                embeddings.extend(std::iter::repeat_n(0.0f32, config.embedding_dim));
            } else {
                embeddings.extend(embedding.iter().map(|&x| x as f32));
                records.push(ExplanationRecord {
                    layer_id: layer,
                    feature_index: f,
                    text,
                    source_url: None,
                });
            }
        }

        let features_name = format!("layer{layer:02}.features.bin");
        matrix::write_raw(dir.join(&features_name), n, config.feature_dim, &features)?;
        let embeddings_name = format!("layer{layer:02}.embeddings.bin");
        matrix::write_raw(dir.join(&embeddings_name), n, config.embedding_dim, &embeddings)?;
        let explanations_name = format!("layer{layer:02}.explanations.jsonl");
        let path = dir.join(&explanations_name);
        std::fs::write(&path, to_json_lines(&records)).map_err(|e| Error::io(&path, e))?;

        // The first layer ships a warped "precomputed" projection; the rest
        // fall back to principal components.
        let projection_name = if li == 0 {
            let m = FeatureMatrix::new(layer, n, config.feature_dim, features)?;
            let pca = principal_components_2d(&m)?;
            let warped = pca.coords.iter().map(|&[x, y]| [x.tanh() * 4.0 + 0.3 * y * y, y.sin() * 3.0]).collect();
            let name = format!("layer{layer:02}.projection.json");
            write_projection(dir.join(&name), &Projection2D::new(layer, ProjectionSource::Precomputed, warped)?)?;
            Some(PathBuf::from(name))
        } else {
            None
        };

        entries.push(LayerEntry {
            layer_id: layer,
            features_path: features_name.into(),
            explanations_path: explanations_name.into(),
            embeddings_path: Some(embeddings_name.into()),
            projection_path: projection_name,
        });
    }

    let manifest = DatasetManifest {
        name: config.name.clone(),
        model: "toy-2l".into(),
        sae_id: Some("toy-res-16k".into()),
        embedding_dim: config.embedding_dim,
        feature_dim: Some(config.feature_dim),
        layers: entries,
        base_dir: dir.to_path_buf(),
    };
    let paths = SyntheticPaths {
        manifest: dir.join("manifest.json"),
        concepts: dir.join("synthetic-things.json"),
        concept_vectors: dir.join("synthetic-things.vectors.json"),
    };
    std::fs::write(&paths.manifest, manifest.to_json_string()).map_err(|e| Error::io(&paths.manifest, e))?;
    std::fs::write(&paths.concepts, concept_set_document(&set)).map_err(|e| Error::io(&paths.concepts, e))?;
    std::fs::write(&paths.concept_vectors, vectors.to_json_string()).map_err(|e| Error::io(&paths.concept_vectors, e))?;
    Ok(paths)
}
