use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Embedder, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub api_key_env: String,
    /// Maximum in-flight requests.
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            model_name: "sentence-transformers/gtr-t5-large".into(),
            batch_size: 64,
            timeout_secs: 60,
            api_key_env: "EMBEDDING_API_KEY".into(),
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Content-addressed vector store, one file per model. Keys are SHA-256 of the text.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: HashMap<String, Vec<f64>>,
    dim: Option<usize>,
    dirty: bool,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: HashMap::new(),
            dim: None,
            dirty: false,
        }
    }

    /// Opens (or starts) the cache file for `model` inside `dir`.
    pub fn open(dir: &Path, model: &str) -> Result<Self> {
        let safe: String = model
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        let path = dir.join(format!("{safe}.emb"));
        let mut cache = Self {
            path: Some(path.clone()),
            ..Self::in_memory()
        };
        if path.exists() {
            let m = EmbeddingMatrix::load(&path)?;
            if !m.is_empty() {
                cache.dim = Some(m.dim());
            }
            for (i, id) in m.ids().iter().enumerate() {
                cache.entries.insert(id.clone(), m.row(i).to_vec());
            }
        }
        Ok(cache)
    }

    pub fn key(model: &str, text: &str) -> String {
        crate::io::sha256_hex(format!("{model}\u{0}{text}").as_bytes())
    }

    pub fn get(&self, key: &str) -> Option<&Vec<f64>> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: String, vector: Vec<f64>) -> Result<()> {
        match self.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: vector.len(),
                })
            }
            None => self.dim = Some(vector.len()),
            _ => {}
        }
        self.entries.insert(key, vector);
        self.dirty = true;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Persists the cache with keys sorted, so equal contents give equal bytes.
    pub fn flush(&mut self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if !self.dirty {
            return Ok(());
        }
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let rows = keys.iter().map(|k| self.entries[*k].clone()).collect();
        let m = EmbeddingMatrix::new(keys.into_iter().cloned().collect(), rows)?;
        m.save(path)?;
        self.dirty = false;
        Ok(())
    }
}

type BatchSlot = Mutex<Option<Result<Vec<Vec<f64>>>>>;

/// Client for an OpenAI-compatible `POST {base_url}/v1/embeddings` endpoint.
pub struct RemoteEmbedder {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    cache: Mutex<EmbeddingCache>,
    remote_calls: AtomicUsize,
    offline: bool,
}

impl RemoteEmbedder {
    pub fn new(config: ProviderConfig, cache: EmbeddingCache) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Invalid("embedding batch_size must be at least 1".into()));
        }
        let client = http::build_client(Duration::from_secs(config.timeout_secs.max(1)))?;
        Ok(Self {
            config,
            client,
            cache: Mutex::new(cache),
            remote_calls: AtomicUsize::new(0),
            offline: false,
        })
    }

    /// Serve from the cache only; a miss is an error instead of a request.
    pub fn offline(mut self) -> Self {
        self.offline = true;
        self
    }

    /// Number of successful HTTP batches sent so far.
    pub fn remote_calls(&self) -> usize {
        self.remote_calls.load(Ordering::SeqCst)
    }

    pub fn flush_cache(&self) -> Result<()> {
        self.cache.lock().expect("cache lock").flush()
    }

    fn fetch_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/v1/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = json!({ "model": self.config.model_name, "input": texts });
        let bearer = http::bearer_from_env(&self.config.api_key_env);
        let resp = http::post_json(&self.client, &url, bearer.as_deref(), &[], &body, &self.config.retry)?;
        self.remote_calls.fetch_add(1, Ordering::SeqCst);
        parse_embeddings_response(&resp.body, texts.len())
    }
}

/// Pulls `data[*].embedding` out of a provider response, ordered by `index`.
pub(crate) fn parse_embeddings_response(body: &Value, expected: usize) -> Result<Vec<Vec<f64>>> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Provider {
            status: 200,
            message: "embeddings response has no `data` array".into(),
        })?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let vector = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Provider {
                status: 200,
                message: format!("item {pos} has no embedding"),
            })?
            .iter()
            .map(|v| v.as_f64().map(|x| x as f32 as f64))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Provider {
                status: 200,
                message: format!("item {pos} has a non-numeric entry"),
            })?;
        let slot = rows.get_mut(index).ok_or_else(|| Error::Provider {
            status: 200,
            message: format!("index {index} out of range"),
        })?;
        *slot = Some(vector);
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| Error::Provider {
                status: 200,
                message: format!("missing embedding for input {i}"),
            })
        })
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let model = &self.config.model_name;
        let keys: Vec<String> = texts.iter().map(|t| EmbeddingCache::key(model, t)).collect();

        // Unique uncached texts, in first-seen order.
        let mut missing: Vec<usize> = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            let mut queued = std::collections::HashSet::new();
            for (i, key) in keys.iter().enumerate() {
                if cache.get(key).is_none() && queued.insert(key.as_str()) {
                    missing.push(i);
                }
            }
        }

        if self.offline && !missing.is_empty() {
            return Err(Error::MissingArtifact(format!(
                "{} embeddings for model `{model}` are not cached and the embedder is offline",
                missing.len()
            )));
        }
        let chunks: Vec<&[usize]> = missing.chunks(self.config.batch_size).collect();
        let results: Vec<BatchSlot> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.concurrency.max(1).min(chunks.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let c = next.fetch_add(1, Ordering::SeqCst);
                    if c >= chunks.len() {
                        break;
                    }
                    let batch: Vec<&str> = chunks[c].iter().map(|&i| texts[i].as_str()).collect();
                    *results[c].lock().expect("slot") = Some(self.fetch_batch(&batch));
                });
            }
        });

        {
            // Successful chunks are kept even when another chunk failed.
            let mut cache = self.cache.lock().expect("cache lock");
            let mut first_err = None;
            for (chunk, result) in chunks.iter().zip(results) {
                match result.into_inner().expect("slot").expect("every chunk ran") {
                    Ok(vectors) => {
                        for (&i, v) in chunk.iter().zip(vectors) {
                            cache.insert(keys[i].clone(), v)?;
                        }
                    }
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }

        let cache = self.cache.lock().expect("cache lock");
        let rows: Vec<Vec<f64>> = keys.iter().map(|k| cache.get(k).cloned().expect("cached above")).collect();
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Ok(rows)
    }
}
