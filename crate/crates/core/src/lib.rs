//! Concept-driven exploration of sparse-autoencoder features.
//!
//! Features relevant to a curated concept set are retrieved by cosine
//! similarity between explanation embeddings and concept embeddings, then
//! summarized per layer with a ball mapper graph laid out next to a 2D
//! projection.

pub mod ballmapper;
pub mod concepts;
pub mod dataset;
pub mod error;
pub mod explore;
pub mod ingestion;
pub mod layout;
pub mod pointcloud;
pub mod synthetic;

pub use ballmapper::{
    build_adaptive, build_mapper, build_nerve, connected_components, estimate_epsilon, greedy_cover,
    shortest_node_path, Ball, Edge, Epsilon, MapperGraph, MapperParams,
};
pub use concepts::{
    category_overlap, category_stats, concepts_per_layer, retrieve_features, search_concepts, AssignmentTable,
    ConceptSet, ConceptVectors, ExplanationEmbeddings,
};
pub use dataset::{Dataset, LayerData};
pub use error::{Error, Result};
pub use layout::{anchored_layout, force_layout, layout_pair, principal_components_2d, LayoutResult, Projection2D};
pub use pointcloud::{cosine_distance, k_nearest, sample_pairwise_distances, DistanceSample, FeatureMatrix, MetricSpace};
