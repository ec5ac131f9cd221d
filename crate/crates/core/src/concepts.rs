//! Concept sets, similarity retrieval of concept-relevant features, and the
//! category statistics derived from the resulting assignments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub concept_id: usize,
    pub word: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub category_id: usize,
    pub name: String,
}

/// Concepts grouped into (possibly overlapping) categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub name: String,
    pub concepts: Vec<Concept>,
    pub categories: Vec<Category>,
    /// Sorted, deduplicated `(concept_id, category_id)` pairs.
    pub membership: Vec<(usize, usize)>,
}

/// Accumulates words and categories in first-appearance order.
#[derive(Default)]
struct SetBuilder {
    concepts: Vec<Concept>,
    by_word: HashMap<String, usize>,
    categories: Vec<Category>,
    by_category: HashMap<String, usize>,
    membership: BTreeSet<(usize, usize)>,
}

impl SetBuilder {
    fn category(&mut self, name: &str) -> usize {
        if let Some(&id) = self.by_category.get(name) {
            return id;
        }
        let id = self.categories.len();
        self.categories.push(Category { category_id: id, name: name.to_string() });
        self.by_category.insert(name.to_string(), id);
        id
    }

    fn add(&mut self, word: &str, category: usize) {
        let id = match self.by_word.get(word) {
            Some(&id) => id,
            None => {
                let id = self.concepts.len();
                self.concepts.push(Concept { concept_id: id, word: word.to_string() });
                self.by_word.insert(word.to_string(), id);
                id
            }
        };
        self.membership.insert((id, category));
    }

    fn finish(self, name: String) -> Result<ConceptSet> {
        let set = ConceptSet {
            name,
            concepts: self.concepts,
            categories: self.categories,
            membership: self.membership.into_iter().collect(),
        };
        set.validate()?;
        Ok(set)
    }
}

impl ConceptSet {
    /// Parses the JSON document form:
    /// `{"name": str, "categories": [{"name": str, "concepts": [str, ...]}, ...]}`.
    pub fn from_json_str(doc: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(doc).map_err(|e| Error::parse("$", e))?;
        let obj = root.as_object().ok_or_else(|| Error::parse("$", "expected an object"))?;
        let name = match obj.get("name") {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::parse("$.name", "expected a string")),
        };
        let categories = obj
            .get("categories")
            .ok_or_else(|| Error::parse("$.categories", "missing field"))?
            .as_array()
            .ok_or_else(|| Error::parse("$.categories", "expected an array"))?;

        let mut builder = SetBuilder::default();
        for (ci, cat) in categories.iter().enumerate() {
            let path = format!("$.categories[{ci}]");
            let cat_name = cat
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::parse(format!("{path}.name"), "expected a string"))?;
            let words = cat
                .get("concepts")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::parse(format!("{path}.concepts"), "expected an array"))?;
            if words.is_empty() {
                return Err(Error::Validation(format!("category {cat_name:?} has no concepts")));
            }
            let cat_id = builder.category(cat_name);
            for (wi, w) in words.iter().enumerate() {
                let word = w.as_str().ok_or_else(|| {
                    Error::parse(format!("{path}.concepts[{wi}]"), "expected a string")
                })?;
                builder.add(word, cat_id);
            }
        }
        builder.finish(name)
    }

    /// Parses `concept,category` rows; the header line is required.
    pub fn from_csv_str(name: &str, doc: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(doc.as_bytes());
        let headers = reader.headers().map_err(|e| Error::parse("line 1", e))?.clone();
        let expected = ["concept", "category"];
        if headers.len() != 2 || headers.iter().zip(expected).any(|(h, e)| !h.eq_ignore_ascii_case(e)) {
            return Err(Error::parse("line 1", "header must be `concept,category`"));
        }
        let mut builder = SetBuilder::default();
        for (i, record) in reader.records().enumerate() {
            let line = format!("line {}", i + 2);
            let record = record.map_err(|e| Error::parse(&line, e))?;
            if record.len() != 2 {
                return Err(Error::parse(line, "expected 2 columns"));
            }
            let cat = builder.category(&record[1]);
            builder.add(&record[0], cat);
        }
        builder.finish(name.to_string())
    }

    /// Loads a `.json` or `.csv` concept-set file. CSV sets are named after
    /// the file stem, as are JSON sets without a `name`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let mut set = if is_csv { Self::from_csv_str(&stem, &doc)? } else { Self::from_json_str(&doc)? };
        if set.name.is_empty() {
            set.name = stem;
        }
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut words = BTreeSet::new();
        for (i, c) in self.concepts.iter().enumerate() {
            if c.concept_id != i {
                return Err(Error::Validation(format!("concept ids must be dense, got {}", c.concept_id)));
            }
            if c.word.trim().is_empty() {
                return Err(Error::Validation(format!("concept {i} has an empty word")));
            }
            if !words.insert(c.word.as_str()) {
                return Err(Error::Validation(format!("duplicate concept word {:?}", c.word)));
            }
        }
        let mut sizes = vec![0usize; self.categories.len()];
        for &(concept, category) in &self.membership {
            if concept >= self.concepts.len() || category >= self.categories.len() {
                return Err(Error::Validation(format!(
                    "membership ({concept}, {category}) references a missing id"
                )));
            }
            sizes[category] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Validation(format!(
                "category {:?} has no concepts",
                self.categories[empty].name
            )));
        }
        Ok(())
    }

    pub fn concept_by_word(&self, word: &str) -> Option<&Concept> {
        self.concepts.iter().find(|c| c.word == word)
    }

    pub fn category_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn categories_of(&self, concept_id: usize) -> impl Iterator<Item = usize> + '_ {
        let start = self.membership.partition_point(|&(c, _)| c < concept_id);
        self.membership[start..].iter().take_while(move |&&(c, _)| c == concept_id).map(|&(_, cat)| cat)
    }

    pub fn concepts_in(&self, category_id: usize) -> impl Iterator<Item = usize> + '_ {
        self.membership.iter().filter(move |&&(_, cat)| cat == category_id).map(|&(c, _)| c)
    }
}

/// Unit-normalized `f64` copy of `v`, or `None` for a zero or non-finite vector.
pub fn normalized(v: &[f32]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    Some(v.iter().map(|&x| f64::from(x) / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sentence-embedding vectors for concept words, unit-normalized at load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptVectors {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct ConceptVectorsDoc {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl ConceptVectors {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: HashMap::new() }
    }

    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, found: vector.len() });
        }
        let unit = normalized(vector).ok_or(Error::DegenerateVector { row: None })?;
        self.vectors.insert(word.to_string(), unit);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `{"dim": int, "vectors": {"word": [float, ...], ...}}`
    pub fn from_json_str(doc: &str) -> Result<Self> {
        let parsed: ConceptVectorsDoc = serde_json::from_str(doc).map_err(|e| Error::parse("$", e))?;
        let mut out = Self::new(parsed.dim);
        for (word, v) in &parsed.vectors {
            out.insert(word, v).map_err(|e| Error::Validation(format!("concept {word:?}: {e}")))?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&doc)
    }

    pub fn to_json_string(&self) -> String {
        let vectors: BTreeMap<&str, Vec<f32>> = self
            .vectors
            .iter()
            .map(|(w, v)| (w.as_str(), v.iter().map(|&x| x as f32).collect()))
            .collect();
        serde_json::json!({ "dim": self.dim, "vectors": vectors }).to_string()
    }
}

/// One layer's feature explanations with their unit-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationEmbeddings {
    pub layer_id: u32,
    pub dim: usize,
    texts: Vec<Option<String>>,
    vectors: Vec<Option<Vec<f64>>>,
}

impl ExplanationEmbeddings {
    /// `texts[i]` and `vectors[i]` describe feature `i`. A vector without
    /// text is dropped; zero vectors mean "no embedding".
    pub fn new(layer_id: u32, dim: usize, texts: Vec<Option<String>>, vectors: Vec<Option<&[f32]>>) -> Result<Self> {
        if texts.len() != vectors.len() {
            return Err(Error::Dimension { expected: texts.len(), found: vectors.len() });
        }
        let mut units = Vec::with_capacity(vectors.len());
        for (i, (text, v)) in texts.iter().zip(vectors).enumerate() {
            let unit = match (text, v) {
                (Some(_), Some(v)) => {
                    if v.len() != dim {
                        return Err(Error::Dimension { expected: dim, found: v.len() });
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Validation(format!("non-finite embedding at row {i}")));
                    }
                    normalized(v)
                }
                _ => None,
            };
            units.push(unit);
        }
        Ok(Self { layer_id, dim, texts, vectors: units })
    }

    pub fn n_features(&self) -> usize {
        self.texts.len()
    }

    pub fn text(&self, feature: usize) -> Option<&str> {
        self.texts.get(feature).and_then(|t| t.as_deref())
    }

    pub fn vector(&self, feature: usize) -> Option<&[f64]> {
        self.vectors.get(feature).and_then(|v| v.as_deref())
    }

    pub fn embedded_count(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub concept_id: usize,
    pub feature_index: usize,
    pub similarity: f64,
}

/// Concept-to-feature assignments of one layer above a similarity threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTable {
    pub layer_id: u32,
    pub threshold: f64,
    /// Sorted by concept, then descending similarity, then feature index.
    pub rows: Vec<Assignment>,
}

impl AssignmentTable {
    pub fn feature_indices(&self) -> BTreeSet<usize> {
        self.rows.iter().map(|r| r.feature_index).collect()
    }

    pub fn concept_ids(&self) -> BTreeSet<usize> {
        self.rows.iter().map(|r| r.concept_id).collect()
    }

    pub fn rows_for_feature(&self, feature: usize) -> impl Iterator<Item = &Assignment> {
        self.rows.iter().filter(move |r| r.feature_index == feature)
    }

    /// Best similarity per assigned feature.
    pub fn max_similarity(&self) -> BTreeMap<usize, f64> {
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for r in &self.rows {
            let e = best.entry(r.feature_index).or_insert(f64::NEG_INFINITY);
            *e = e.max(r.similarity);
        }
        best
    }

    /// Distinct features reached through the concepts of each category.
    pub fn features_by_category(&self, set: &ConceptSet) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); set.categories.len()];
        for r in &self.rows {
            for cat in set.categories_of(r.concept_id) {
                out[cat].insert(r.feature_index);
            }
        }
        out
    }
}

/// Includes every (concept, embedded feature) pair whose cosine similarity
/// strictly exceeds `threshold`.
pub fn retrieve_features(
    layer: &ExplanationEmbeddings,
    set: &ConceptSet,
    concept_vectors: &ConceptVectors,
    threshold: f64,
) -> Result<AssignmentTable> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let missing: Vec<String> = set
        .concepts
        .iter()
        .filter(|c| concept_vectors.get(&c.word).is_none())
        .map(|c| c.word.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::EmbeddingMissing(missing));
    }
    if concept_vectors.dim != layer.dim {
        return Err(Error::Dimension { expected: layer.dim, found: concept_vectors.dim });
    }

    let mut rows = Vec::new();
    for concept in &set.concepts {
        let cv = concept_vectors.get(&concept.word).expect("checked above");
        let start = rows.len();
        for (feature, fv) in layer.vectors.iter().enumerate() {
            let Some(fv) = fv else { continue };
            let similarity = dot(cv, fv).clamp(-1.0, 1.0);
            if similarity > threshold {
                rows.push(Assignment { concept_id: concept.concept_id, feature_index: feature, similarity });
            }
        }
        rows[start..].sort_by(|a, b| {
            b.similarity.total_cmp(&a.similarity).then(a.feature_index.cmp(&b.feature_index))
        });
    }
    Ok(AssignmentTable { layer_id: layer.layer_id, threshold, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer_id: u32,
    pub discovered_concepts: usize,
}

/// Number of distinct concepts with at least one feature, per layer.
pub fn concepts_per_layer(tables: &[AssignmentTable]) -> Vec<LayerCount> {
    let mut counts: Vec<LayerCount> = tables
        .iter()
        .map(|t| LayerCount { layer_id: t.layer_id, discovered_concepts: t.concept_ids().len() })
        .collect();
    counts.sort_by_key(|c| c.layer_id);
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category_id: usize,
    pub name: String,
    pub feature_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shared_with_pinned: Option<usize>,
}

/// Distinct feature count per category, descending, ties by name.
pub fn category_stats(table: &AssignmentTable, set: &ConceptSet) -> Vec<CategoryCount> {
    let by_cat = table.features_by_category(set);
    let mut rows: Vec<CategoryCount> = set
        .categories
        .iter()
        .map(|c| CategoryCount {
            category_id: c.category_id,
            name: c.name.clone(),
            feature_count: by_cat[c.category_id].len(),
            shared_with_pinned: None,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.feature_count.cmp(&a.feature_count).then_with(|| a.name.cmp(&b.name)).then(a.category_id.cmp(&b.category_id))
    });
    rows
}

fn check_category(set: &ConceptSet, id: usize) -> Result<()> {
    if id >= set.categories.len() {
        return Err(Error::Index { what: "category", index: id, len: set.categories.len() });
    }
    Ok(())
}

/// Distinct features assigned to both categories.
pub fn category_overlap(table: &AssignmentTable, set: &ConceptSet, pinned: usize, other: usize) -> Result<usize> {
    check_category(set, pinned)?;
    check_category(set, other)?;
    let by_cat = table.features_by_category(set);
    Ok(by_cat[pinned].intersection(&by_cat[other]).count())
}

/// Category rows carrying their overlap with `pinned`, sorted by descending
/// shared features, then name.
pub fn pinned_comparison(table: &AssignmentTable, set: &ConceptSet, pinned: usize) -> Result<Vec<CategoryCount>> {
    check_category(set, pinned)?;
    let by_cat = table.features_by_category(set);
    let mut rows: Vec<CategoryCount> = set
        .categories
        .iter()
        .map(|c| CategoryCount {
            category_id: c.category_id,
            name: c.name.clone(),
            feature_count: by_cat[c.category_id].len(),
            shared_with_pinned: Some(by_cat[pinned].intersection(&by_cat[c.category_id]).count()),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.shared_with_pinned
            .cmp(&a.shared_with_pinned)
            .then_with(|| a.name.cmp(&b.name))
            .then(a.category_id.cmp(&b.category_id))
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptHit {
    pub concept_id: usize,
    pub word: String,
    /// `(feature_index, similarity)`, descending similarity.
    pub features: Vec<(usize, f64)>,
}

/// Case-insensitive substring search over retrieved concepts. Exact matches
/// come first, then by word, then by id. An empty query lists every concept
/// that has at least one feature.
pub fn search_concepts(set: &ConceptSet, table: &AssignmentTable, query: &str) -> Vec<ConceptHit> {
    let needle = query.to_lowercase();
    let mut per_concept: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &table.rows {
        per_concept.entry(r.concept_id).or_default().push((r.feature_index, r.similarity));
    }
    let mut hits: Vec<(bool, String, ConceptHit)> = per_concept
        .into_iter()
        .filter_map(|(id, mut features)| {
            let concept = set.concepts.get(id)?;
            let lower = concept.word.to_lowercase();
            if !lower.contains(&needle) {
                return None;
            }
            features.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let hit = ConceptHit { concept_id: id, word: concept.word.clone(), features };
            Some((lower == needle, lower, hit))
        })
        .collect();
    hits.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.word.cmp(&b.2.word))
            .then(a.2.concept_id.cmp(&b.2.concept_id))
    });
    hits.into_iter().map(|(_, _, h)| h).collect()
}
