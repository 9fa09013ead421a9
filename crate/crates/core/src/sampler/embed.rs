use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::SampleError;
use crate::backend::RetryPolicy;

/// A dense embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SampleError> {
        if values.is_empty() {
            return Err(SampleError::NonFinite("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SampleError::NonFinite("vector has NaN or infinite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            Self(self.0.iter().map(|v| v / n).collect())
        }
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = SampleError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SampleError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SampleError> {
        (**self).embed(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SampleError> {
        (**self).embed(texts)
    }
}

fn check_texts(texts: &[&str]) -> Result<(), SampleError> {
    match texts.iter().position(|t| t.trim().is_empty()) {
        Some(i) => Err(SampleError::EmptyText(i)),
        None => Ok(()),
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Offline embedder: hashed character n-gram counts, L2-normalized.
///
/// Text is lowercased and padded with one space on each side; every window
/// of `n` characters is hashed with FNV-1a into one of `dim` buckets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashNgramEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl Default for HashNgramEmbedder {
    fn default() -> Self {
        Self { dim: 256, n: 3 }
    }
}

impl HashNgramEmbedder {
    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let padded: Vec<char> =
            std::iter::once(' ').chain(text.to_lowercase().chars()).chain(std::iter::once(' ')).collect();
        let mut counts = vec![0.0f64; self.dim];
        let mut buf = String::new();
        let width = self.n.min(padded.len());
        for window in padded.windows(width) {
            buf.clear();
            buf.extend(window);
            counts[(fnv1a(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        EmbeddingVector(counts).normalized()
    }
}

impl EmbeddingProvider for HashNgramEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SampleError> {
        check_texts(texts)?;
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

fn default_batch_size() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEmbeddingConfig {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

/// Remote embedder for endpoints accepting `{model, input: [..]}` and
/// returning `{data: [{index, embedding}]}`.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    config: HttpEmbeddingConfig,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbeddingConfig, retry: RetryPolicy) -> Self {
        let api_key = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Self {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("HTTP client builds with static settings"),
            config,
            api_key,
            retry,
        }
    }

    fn post_batch(&self, batch: &[&str]) -> Result<Vec<EmbeddingVector>, String> {
        let mut call =
            self.client.post(&self.config.url).json(&json!({"model": self.config.model, "input": batch}));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("status {status}: {body}"));
        }
        parse_embeddings(&body, batch.len())
    }
}

pub(crate) fn parse_embeddings(body: &Value, expected: usize) -> Result<Vec<EmbeddingVector>, String> {
    let data = body.get("data").and_then(Value::as_array).ok_or("response has no data array")?;
    let mut out: Vec<Option<EmbeddingVector>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let idx = item.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
        let values: Vec<f64> =
            serde_json::from_value(item.get("embedding").cloned().ok_or("item without embedding")?)
                .map_err(|e| e.to_string())?;
        let slot = out.get_mut(idx).ok_or("embedding index out of range")?;
        *slot = Some(EmbeddingVector::new(values).map_err(|e| e.to_string())?);
    }
    out.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| "missing embeddings in response".to_string())
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SampleError> {
        check_texts(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.batch_size.max(1)) {
            let mut attempt = 1;
            let vectors = loop {
                match self.post_batch(batch) {
                    Ok(v) => break v,
                    Err(e) if attempt < self.retry.max_attempts => {
                        log::warn!("embedding attempt {attempt} failed: {e}");
                        std::thread::sleep(self.retry.backoff(attempt));
                        attempt += 1;
                    }
                    Err(e) => return Err(SampleError::Provider(e)),
                }
            };
            out.extend(vectors);
        }
        check_dims(&out)?;
        Ok(out)
    }
}

pub(crate) fn check_dims(vectors: &[EmbeddingVector]) -> Result<(), SampleError> {
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
            return Err(SampleError::DimensionMismatch { expected: first.dim(), found: bad.dim() });
        }
    }
    Ok(())
}

/// Remembers embeddings by text so repeated runs over one dataset embed it
/// once.
pub struct MemoizedEmbedder<P> {
    inner: P,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<P: EmbeddingProvider> MemoizedEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, memo: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.memo.lock().expect("memo poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for MemoizedEmbedder<P> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SampleError> {
        let missing: Vec<&str> = {
            let memo = self.memo.lock().expect("memo poisoned");
            let mut seen = std::collections::HashSet::new();
            texts.iter().copied().filter(|t| !memo.contains_key(*t) && seen.insert(*t)).collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            let mut memo = self.memo.lock().expect("memo poisoned");
            for (t, v) in missing.into_iter().zip(fresh) {
                memo.insert(t.to_string(), v);
            }
        }
        let memo = self.memo.lock().expect("memo poisoned");
        Ok(texts.iter().map(|t| memo[*t].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_texts_identical_vectors() {
        let e = HashNgramEmbedder::default();
        let v = e.embed(&["the same text", "the same text"]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].dim(), 256);
    }

    #[test]
    fn unit_norm() {
        let e = HashNgramEmbedder::default();
        for t in ["a", "hello world", "Ünïcödé text", "aaaa", "x y z 1 2 3"] {
            let v = e.embed_one(t);
            assert!((v.norm() - 1.0).abs() < 1e-9, "{t}: {}", v.norm());
        }
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn disjoint_strings_are_dissimilar() {
        let e = HashNgramEmbedder::default();
        let cos = e.embed_one("aaaa").cosine(&e.embed_one("zzzz"));
        // Buckets: " aa"/"aaa"x2/"aa " vs " zz"/"zzz"x2/"zz " never share a
        // bucket, so the vectors are orthogonal.
        assert_eq!(cos, 0.0);
        assert!(cos < 0.5);
    }

    #[test]
    fn empty_text_rejected() {
        let e = HashNgramEmbedder::default();
        assert!(matches!(e.embed(&["ok", " "]), Err(SampleError::EmptyText(1))));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(serde_json::from_str::<EmbeddingVector>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn parses_embedding_payload_by_index() {
        let body = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]},
        ]});
        let v = parse_embeddings(&body, 2).unwrap();
        assert_eq!(v[0].values(), &[1.0, 0.0]);
        assert_eq!(v[1].values(), &[0.0, 1.0]);
        assert!(parse_embeddings(&body, 3).is_err());
    }

    struct Counting(std::sync::atomic::AtomicUsize);

    impl EmbeddingProvider for Counting {
        fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SampleError> {
            self.0.fetch_add(texts.len(), std::sync::atomic::Ordering::SeqCst);
            HashNgramEmbedder::default().embed(texts)
        }
    }

    #[test]
    fn memoized_embeds_each_text_once() {
        let m = MemoizedEmbedder::new(Counting(Default::default()));
        let a = m.embed(&["x", "y", "x"]).unwrap();
        let b = m.embed(&["y", "z"]).unwrap();
        assert_eq!(a[0], a[2]);
        assert_eq!(a[1], b[0]);
        assert_eq!(m.inner.0.load(std::sync::atomic::Ordering::SeqCst), 3);
    }
}
