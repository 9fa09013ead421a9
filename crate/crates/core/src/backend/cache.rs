use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};

/// Stable SHA-256 digest over every field that influences the completion.
pub fn cache_key(req: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    // Length-prefix each variable-width field so concatenations can't collide.
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(req.model_id.as_bytes());
    field(req.prompt_text.as_bytes());
    field(&req.temperature.to_bits().to_le_bytes());
    field(&req.max_output_tokens.to_le_bytes());
    match &req.stop_sequences {
        None => field(b"none"),
        Some(stops) => {
            field(b"some");
            field(&(stops.len() as u64).to_le_bytes());
            for s in stops {
                field(s.as_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// One stored completion, written as `<cache_key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CompletionRequest,
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Content-addressed on-disk cache in front of another backend.
///
/// Concurrent calls with the same key are serialized, so the inner backend
/// sees at most one call per key while an entry is being produced.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { inner, dir, locks: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("cache lock map poisoned");
        locks.entry(key.to_string()).or_default().clone()
    }

    fn read(&self, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key => Some(entry),
            Ok(_) | Err(_) => {
                log::warn!("ignoring corrupt cache entry {}", path.display());
                None
            }
        }
    }

    fn write(&self, entry: &CacheEntry) -> Result<(), BackendError> {
        let err = |e: std::io::Error| BackendError::Cache(e.to_string());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(err)?;
        let body = serde_json::to_vec_pretty(entry).expect("cache entries serialize");
        tmp.write_all(&body).map_err(err)?;
        tmp.persist(self.entry_path(&entry.key)).map_err(|e| BackendError::Cache(e.to_string()))?;
        Ok(())
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        let started = Instant::now();
        let key = cache_key(req);
        let lock = self.key_lock(&key);
        let _guard = lock.lock().expect("cache key lock poisoned");
        if !req.refresh {
            if let Some(entry) = self.read(&key) {
                return Ok(CompletionResponse {
                    text: entry.text,
                    input_tokens: entry.input_tokens,
                    output_tokens: entry.output_tokens,
                    cached: true,
                    latency_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }
        }
        let resp = self.inner.complete(req)?;
        let mut stored = req.clone();
        stored.refresh = false;
        self.write(&CacheEntry {
            key,
            request: stored,
            text: resp.text.clone(),
            input_tokens: resp.input_tokens,
            output_tokens: resp.output_tokens,
        })?;
        Ok(resp)
    }
}
