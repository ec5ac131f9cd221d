//! Paged download of feature explanations from a Neuronpedia-style service.
//!
//! Wire contract: `GET {base}/explanations?model=..&sae=..&layer=..&page=..`
//! answers `{"items": [{"feature": int, "text": str, "url": str}], "next": int | null}`.
//! HTTP 429 and 5xx are retried with exponential backoff; 401/403 fail
//! immediately.

use std::time::Duration;

use serde::Deserialize;

use super::cache::{Cache, CacheKey};
use super::explanations::ExplanationRecord;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "NEURONPEDIA_API_KEY";

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
    /// Upper bound on concurrent requests in [`fetch_layers`].
    pub max_in_flight: usize,
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(30),
            max_retries: 5,
            backoff_base: Duration::from_secs(1),
            backoff_factor: 2.0,
            max_in_flight: 4,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base.mul_f64(self.backoff_factor.powi(attempt as i32))
    }
}

#[derive(Deserialize)]
struct PageItem {
    feature: usize,
    text: String,
    #[serde(default)]
    url: Option<String>,
}

#[derive(Deserialize)]
struct Page {
    items: Vec<PageItem>,
    next: Option<u64>,
}

fn excerpt(body: &str) -> String {
    let mut s: String = body.chars().take(200).collect();
    if body.chars().count() > 200 {
        s.push('…');
    }
    s
}

struct Client<'a> {
    config: &'a ClientConfig,
    agent: ureq::Agent,
}

impl<'a> Client<'a> {
    fn new(config: &'a ClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn get_page(&self, model: &str, sae_id: &str, layer: u32, page: u64) -> Result<String> {
        let url = format!("{}/explanations", self.config.base_url);
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff(attempt - 1));
            }
            let mut req = self
                .agent
                .get(&url)
                .query("model", model)
                .query("sae", sae_id)
                .query("layer", layer.to_string())
                .query("page", page.to_string());
            if let Some(key) = &self.config.api_key {
                req = req.header("x-api-key", key);
            }
            let mut resp = match req.call() {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    log::debug!("page {page} attempt {attempt}: {last_error}");
                    continue;
                }
            };
            let status = resp.status().as_u16();
            match status {
                200..=299 => {
                    return resp.body_mut().read_to_string().map_err(|e| Error::Remote(e.to_string()));
                }
                401 | 403 => return Err(Error::Auth(format!("{url} answered HTTP {status}"))),
                429 | 500..=599 => {
                    last_error = format!("HTTP {status}");
                    log::debug!("page {page} attempt {attempt}: {last_error}, backing off");
                }
                _ => return Err(Error::Remote(format!("{url} answered HTTP {status}"))),
            }
        }
        Err(Error::Remote(format!(
            "page {page} failed after {} retries: {last_error}",
            self.config.max_retries
        )))
    }
}

/// Cache key for one layer's remote listing.
pub fn remote_cache_key(config: &ClientConfig, model: &str, sae_id: &str, layer: u32) -> CacheKey {
    CacheKey::builder("remote-explanations")
        .param("base", &config.base_url)
        .param("model", model)
        .param("sae", sae_id)
        .param("layer", layer)
        .build()
}

/// Fetches every page of one layer's explanations, in page order. With a
/// cache, a stored listing is returned as-is and fresh listings are stored.
pub fn fetch_explanations_remote(
    config: &ClientConfig,
    model: &str,
    sae_id: &str,
    layer: u32,
    cache: Option<&Cache>,
) -> Result<Vec<ExplanationRecord>> {
    let key = remote_cache_key(config, model, sae_id, layer);
    if let Some(hit) = cache.and_then(|c| c.get_json::<Vec<ExplanationRecord>>(&key)) {
        return Ok(hit);
    }

    let client = Client::new(config);
    let mut records = Vec::new();
    let mut page = Some(0u64);
    while let Some(p) = page {
        let body = client.get_page(model, sae_id, layer, p)?;
        let parsed: Page = serde_json::from_str(&body).map_err(|e| Error::Parse {
            location: format!("page {p}"),
            message: format!("{e}; payload: {}", excerpt(&body)),
        })?;
        records.extend(parsed.items.into_iter().map(|item| ExplanationRecord {
            layer_id: layer,
            feature_index: item.feature,
            text: item.text,
            source_url: item.url,
        }));
        page = match parsed.next {
            Some(n) if n <= p => {
                return Err(Error::Parse {
                    location: format!("page {p}"),
                    message: format!("`next` = {n} does not advance"),
                })
            }
            other => other,
        };
    }

    if let Some(cache) = cache {
        cache.put_json(&key, &records)?;
    }
    Ok(records)
}

/// Fetches several layers with at most `max_in_flight` concurrent listings.
/// Results follow the order of `layers`.
pub fn fetch_layers(
    config: &ClientConfig,
    model: &str,
    sae_id: &str,
    layers: &[u32],
    cache: Option<&Cache>,
) -> Result<Vec<Vec<ExplanationRecord>>> {
    let width = config.max_in_flight.max(1);
    let mut out = Vec::with_capacity(layers.len());
    for chunk in layers.chunks(width) {
        let results: Vec<Result<Vec<ExplanationRecord>>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&layer| s.spawn(move || fetch_explanations_remote(config, model, sae_id, layer, cache)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("fetch thread panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}
