//! Loading SAE feature matrices, explanations, embeddings and projections,
//! plus the artifact cache and the remote explanation client.

pub mod cache;
pub mod explanations;
pub mod manifest;
pub mod matrix;
pub mod remote;

pub use cache::{Cache, CacheKey};
pub use explanations::{load_explanations, ExplanationLoad, ExplanationRecord};
pub use manifest::{load_projection, write_projection, DatasetManifest, LayerEntry};
pub use matrix::{load_feature_matrix, write_feature_matrix};
pub use remote::{fetch_explanations_remote, fetch_layers, ClientConfig};
