//! Feature explanations as JSON lines:
//! `{"layer": int, "feature": int, "text": str, "url": str?}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    #[serde(rename = "layer")]
    pub layer_id: u32,
    #[serde(rename = "feature")]
    pub feature_index: usize,
    pub text: String,
    #[serde(rename = "url", default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExplanationLoad {
    /// Sorted by `(layer, feature)`.
    pub records: Vec<ExplanationRecord>,
    /// Number of records overwritten by a later line with the same key.
    pub duplicates: usize,
}

pub fn parse_explanations(doc: &str) -> Result<ExplanationLoad> {
    let mut by_key: BTreeMap<(u32, usize), ExplanationRecord> = BTreeMap::new();
    let mut duplicates = 0;
    for (i, line) in doc.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("line {}", i + 1);
        let record: ExplanationRecord = serde_json::from_str(line).map_err(|e| Error::parse(&location, e))?;
        if record.text.trim().is_empty() {
            return Err(Error::parse(location, "empty explanation text"));
        }
        if by_key.insert((record.layer_id, record.feature_index), record).is_some() {
            duplicates += 1;
        }
    }
    Ok(ExplanationLoad { records: by_key.into_values().collect(), duplicates })
}

pub fn load_explanations(path: impl AsRef<Path>) -> Result<ExplanationLoad> {
    let path = path.as_ref();
    let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_explanations(&doc).map_err(|e| match e {
        Error::Parse { location, message } => {
            Error::Parse { location: format!("{}:{location}", path.display()), message }
        }
        other => other,
    })
}

pub fn to_json_lines(records: &[ExplanationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}
