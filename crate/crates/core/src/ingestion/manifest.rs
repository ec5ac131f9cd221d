//! Dataset manifests and projection files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Projection2D, ProjectionSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer_id: u32,
    pub features_path: PathBuf,
    pub explanations_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_path: Option<PathBuf>,
}

/// Per-layer file inventory of one dataset. Relative paths resolve against
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub model: String,
    /// Identifier of the SAE release, used for outbound feature links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sae_id: Option<String>,
    pub embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    pub layers: Vec<LayerEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn from_json_str(doc: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m: DatasetManifest = serde_json::from_str(doc).map_err(|e| Error::parse("manifest", e))?;
        m.base_dir = base_dir.into();
        m.validate_shape()?;
        Ok(m)
    }

    /// Parses the manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::from_json_str(&doc, base).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { location: path.display().to_string(), message },
            other => other,
        })?;
        m.check_files()?;
        Ok(m)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("manifest name is empty".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Validation("embedding_dim must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Validation("manifest lists no layers".into()));
        }
        for w in self.layers.windows(2) {
            if w[1].layer_id <= w[0].layer_id {
                return Err(Error::Validation(format!(
                    "layer ids must be unique and ascending ({} then {})",
                    w[0].layer_id, w[1].layer_id
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// All referenced files as `(layer, role, resolved path)`.
    pub fn files(&self) -> Vec<(u32, &'static str, PathBuf)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((l.layer_id, "features", self.resolve(&l.features_path)));
            out.push((l.layer_id, "explanations", self.resolve(&l.explanations_path)));
            if let Some(p) = &l.embeddings_path {
                out.push((l.layer_id, "embeddings", self.resolve(p)));
            }
            if let Some(p) = &l.projection_path {
                out.push((l.layer_id, "projection", self.resolve(p)));
            }
        }
        out
    }

    pub fn check_files(&self) -> Result<()> {
        for (layer, role, path) in self.files() {
            if !path.is_file() {
                return Err(Error::Validation(format!(
                    "layer {layer}: {role} file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn layer(&self, layer_id: u32) -> Option<&LayerEntry> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest always serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectionDoc {
    layer: u32,
    n: usize,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<[f64; 2]>>,
}

/// Reads a projection manifest. Coordinates come from the inline `coords`
/// array, or from a sidecar of `n x 2` little-endian `f32` values: the
/// `data` path if given, else the manifest path with a `.bin` extension.
pub fn load_projection(path: impl AsRef<Path>) -> Result<Projection2D> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ProjectionDoc =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let source = match doc.source.as_str() {
        "principal_components" | "pca" => ProjectionSource::PrincipalComponents,
        _ => ProjectionSource::Precomputed,
    };
    let coords = match doc.coords {
        Some(c) => c,
        None => {
            let sidecar = match &doc.data {
                Some(d) if d.is_absolute() => d.clone(),
                Some(d) => path.parent().unwrap_or(Path::new("")).join(d),
                None => path.with_extension("bin"),
            };
            let bytes = std::fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            if bytes.len() != doc.n * 8 {
                return Err(Error::Format(format!(
                    "{}: expected {} bytes for {} points, found {}",
                    sidecar.display(),
                    doc.n * 8,
                    doc.n,
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(8)
                .map(|c| {
                    let x = f32::from_le_bytes(c[0..4].try_into().expect("4 bytes"));
                    let y = f32::from_le_bytes(c[4..8].try_into().expect("4 bytes"));
                    [f64::from(x), f64::from(y)]
                })
                .collect()
        }
    };
    if coords.len() != doc.n {
        return Err(Error::Validation(format!(
            "{}: manifest says n = {}, found {} coordinates",
            path.display(),
            doc.n,
            coords.len()
        )));
    }
    Projection2D::new(doc.layer, source, coords)
}

/// Writes a projection manifest at `path` with its binary sidecar next to it.
pub fn write_projection(path: impl AsRef<Path>, p: &Projection2D) -> Result<()> {
    let path = path.as_ref();
    let sidecar = path.with_extension("bin");
    let mut bytes = Vec::with_capacity(p.coords.len() * 8);
    for c in &p.coords {
        bytes.extend_from_slice(&(c[0] as f32).to_le_bytes());
        bytes.extend_from_slice(&(c[1] as f32).to_le_bytes());
    }
    std::fs::write(&sidecar, bytes).map_err(|e| Error::io(&sidecar, e))?;
    let doc = ProjectionDoc {
        layer: p.layer_id,
        n: p.coords.len(),
        source: match p.source {
            ProjectionSource::Precomputed => "precomputed".into(),
            ProjectionSource::PrincipalComponents => "principal_components".into(),
        },
        data: sidecar.file_name().map(PathBuf::from),
        coords: None,
    };
    let text = serde_json::to_string_pretty(&doc).expect("projection manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
