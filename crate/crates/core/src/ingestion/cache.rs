//! Content-addressed on-disk store for derived artifacts.
//!
//! Keys are SHA-256 digests over every input that determines an artifact
//! (input file bytes, parameters, format version). Entries are written to a
//! temporary file and renamed into place; an entry that fails its checksum
//! or does not deserialize is removed and reported as a miss.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_DIR_ENV: &str = "SAESCOPE_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".saescope-cache";

/// Bumped whenever a cached payload's encoding or the computation behind it
/// changes.
pub const CODE_VERSION: &str = concat!("saescope-core/", env!("CARGO_PKG_VERSION"), "/v1");

const ENTRY_MAGIC: &[u8; 8] = b"SAECACHE";
const ENTRY_HEADER: usize = 8 + 8 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn builder(kind: &str) -> CacheKeyBuilder {
        CacheKeyBuilder::new(kind)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Length-prefixed hashing of named fields, so `("ab", "c")` and
/// `("a", "bc")` never collide.
pub struct CacheKeyBuilder {
    hasher: Sha256,
}

impl CacheKeyBuilder {
    fn new(kind: &str) -> Self {
        let mut b = Self { hasher: Sha256::new() };
        b = b.field("code_version", CODE_VERSION.as_bytes());
        b.field("kind", kind.as_bytes())
    }

    pub fn field(mut self, name: &str, bytes: &[u8]) -> Self {
        for part in [name.as_bytes(), bytes] {
            self.hasher.update((part.len() as u64).to_le_bytes());
            self.hasher.update(part);
        }
        self
    }

    pub fn param(self, name: &str, value: impl fmt::Display) -> Self {
        let text = value.to_string();
        self.field(name, text.as_bytes())
    }

    pub fn build(self) -> CacheKey {
        CacheKey(self.hasher.finalize().into())
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub payload: Vec<u8>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$SAESCOPE_CACHE_DIR`, or `./.saescope-cache`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_CACHE_DIR.into()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let hex = key.to_hex();
        self.dir.join(&hex[..2]).join(format!("{hex}.entry"))
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entry_path(key).is_file()
    }

    pub fn get_entry(&self, key: &CacheKey) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let bytes = std::fs::read(&path).ok()?;
        match decode_entry(&bytes) {
            Some((created_at, payload)) => Some(CacheEntry { key: *key, payload: payload.to_vec(), created_at }),
            None => {
                log::warn!("evicting corrupt cache entry {}", path.display());
                let _ = std::fs::remove_file(&path);
                None
            }
        }
    }

    pub fn get(&self, key: &CacheKey) -> Option<Vec<u8>> {
        self.get_entry(key).map(|e| e.payload)
    }

    pub fn put(&self, key: &CacheKey, payload: &[u8]) -> Result<()> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry paths have a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;

        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut bytes = Vec::with_capacity(ENTRY_HEADER + payload.len());
        bytes.extend_from_slice(ENTRY_MAGIC);
        bytes.extend_from_slice(&created_at.to_le_bytes());
        bytes.extend_from_slice(&Sha256::digest(payload));
        bytes.extend_from_slice(payload);

        let tmp = parent.join(format!(
            ".{}.{}.{}.tmp",
            key.to_hex(),
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            std::fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::io(&path, e)
        })
    }

    pub fn get_json<T: DeserializeOwned>(&self, key: &CacheKey) -> Option<T> {
        let payload = self.get(key)?;
        match serde_json::from_slice(&payload) {
            Ok(v) => Some(v),
            Err(_) => {
                self.evict(key);
                None
            }
        }
    }

    pub fn put_json<T: Serialize>(&self, key: &CacheKey, value: &T) -> Result<()> {
        let payload = serde_json::to_vec(value).map_err(|e| Error::Format(e.to_string()))?;
        self.put(key, &payload)
    }

    pub fn evict(&self, key: &CacheKey) {
        let _ = std::fs::remove_file(self.entry_path(key));
    }
}

fn decode_entry(bytes: &[u8]) -> Option<(u64, &[u8])> {
    if bytes.len() < ENTRY_HEADER || &bytes[..8] != ENTRY_MAGIC {
        return None;
    }
    let created_at = u64::from_le_bytes(bytes[8..16].try_into().ok()?);
    let digest = &bytes[16..48];
    let payload = &bytes[ENTRY_HEADER..];
    (Sha256::digest(payload).as_slice() == digest).then_some((created_at, payload))
}
