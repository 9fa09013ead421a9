//! Tool configuration file and the backends and embedders built from it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::ValueEnum;
use semslice::backend::{
    Backend, CachedBackend, HttpBackend, HttpEndpoint, MockBackend, MockSpec, RetryPolicy, Retrying, Router,
};
use semslice::runconfig::{named_preset, SliceConfig};
use semslice::sampler::{
    EmbeddingConfig, EmbeddingProvider, HashNgramEmbedder, HttpEmbedder, MemoizedEmbedder,
};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const DEFAULT_PRESET: &str = "M_zero-shot";
pub const DEFAULT_HTTP_CACHE_DIR: &str = ".semslice-cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Everything a run needs besides its inputs. All fields are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Where per-run output directories are created.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// A full slicing configuration; takes precedence over `preset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<SliceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_failure_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub endpoints: Vec<HttpEndpoint>,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub mock: MockSpec,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl ToolConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Picks the slicing configuration: an explicit preset, then a config
    /// file, then `[slice]`, then `preset`, then zero-shot. `seed`
    /// overrides whatever the source says; presets otherwise use 0.
    pub fn slice_config(
        &self,
        preset: Option<&str>,
        file: Option<&Path>,
        seed: Option<u64>,
    ) -> Result<SliceConfig> {
        let mut config = if let Some(name) = preset {
            named_preset(name).map_err(|e| UsageError(e.to_string()))?
        } else if let Some(path) = file {
            SliceConfig::from_file(path).map_err(|e| UsageError(e.to_string()))?
        } else if let Some(slice) = &self.slice {
            slice.clone()
        } else {
            let name = self.preset.as_deref().unwrap_or(DEFAULT_PRESET);
            named_preset(name).map_err(|e| UsageError(e.to_string()))?
        };
        if let Some(seed) = seed {
            config.seed = seed;
        }
        Ok(config)
    }

    /// The response cache directory: the explicit one, else a default for
    /// the HTTP backend only. Mock runs are not cached unless asked.
    pub fn cache_dir(&self, flag: Option<&Path>, kind: BackendKind) -> Option<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.cache_dir.clone())
            .or_else(|| (kind == BackendKind::Http).then(|| DEFAULT_HTTP_CACHE_DIR.into()))
    }

    pub fn build_backend(&self, kind: BackendKind, cache_dir: Option<&Path>) -> Result<Arc<dyn Backend>> {
        let base: Arc<dyn Backend> = match kind {
            BackendKind::Mock => Arc::new(MockBackend::from_spec(&self.mock)),
            BackendKind::Http => {
                if self.endpoints.is_empty() {
                    return Err(UsageError(
                        "the http backend needs at least one [[endpoints]] entry in --config".into(),
                    )
                    .into());
                }
                let mut router = Router::new();
                for ep in &self.endpoints {
                    let backend: Arc<dyn Backend> =
                        Arc::new(Retrying::new(HttpBackend::from_endpoint(ep), self.retry.clone()));
                    for model in &ep.models {
                        router.insert(model.clone(), backend.clone());
                    }
                }
                Arc::new(router)
            }
        };
        Ok(match cache_dir {
            Some(dir) => Arc::new(
                CachedBackend::new(base, dir)
                    .with_context(|| format!("cannot open cache {}", dir.display()))?,
            ),
            None => base,
        })
    }

    /// A memoizing embedder, so batch runs embed the dataset once.
    pub fn build_embedder(&self) -> Arc<dyn EmbeddingProvider> {
        match &self.embedding {
            EmbeddingConfig::HashNgram => Arc::new(MemoizedEmbedder::new(HashNgramEmbedder::default())),
            EmbeddingConfig::Http(cfg) => {
                Arc::new(MemoizedEmbedder::new(HttpEmbedder::new(cfg.clone(), self.retry.clone())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
backend = "mock"
preset = "M_fs-div"
max_failure_rate = 0.2

[[endpoints]]
url = "http://localhost:8000/v1/chat/completions"
api_key_env = "OPENAI_API_KEY"
models = ["flan-t5-xxl", "gpt-4-turbo-preview"]

[embedding]
provider = "http"
url = "http://localhost:8001/v1/embeddings"
model = "text-embedding-3-small"

[mock]
keywords = ["mosque", "islam"]
default = "no"

[retry]
max_attempts = 2
"#;

    #[test]
    fn parses_every_section() {
        let c: ToolConfig = toml::from_str(FULL).unwrap();
        assert_eq!(c.backend, Some(BackendKind::Mock));
        assert_eq!(c.endpoints[0].models.len(), 2);
        assert!(matches!(c.embedding, EmbeddingConfig::Http(ref h) if h.model == "text-embedding-3-small"));
        assert_eq!(c.mock.keywords, ["mosque", "islam"]);
        assert_eq!(c.retry.max_attempts, 2);
        // unspecified retry fields keep their defaults
        assert_eq!(c.retry.max_backoff, RetryPolicy::default().max_backoff);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ToolConfig>("bakend = \"mock\"").is_err());
    }

    #[test]
    fn slice_config_precedence() {
        let c: ToolConfig = toml::from_str(FULL).unwrap();
        assert_eq!(c.slice_config(None, None, None).unwrap().label(), "M_fs-div");
        let explicit = c.slice_config(Some("M_few-shot"), None, Some(9)).unwrap();
        assert_eq!((explicit.label(), explicit.seed), ("M_few-shot", 9));
        let default = ToolConfig::default().slice_config(None, None, None).unwrap();
        assert_eq!((default.label(), default.seed), (DEFAULT_PRESET, 0));
        assert!(c.slice_config(Some("M_unknown"), None, None).is_err());
    }

    #[test]
    fn cache_defaults_only_for_http() {
        let c = ToolConfig::default();
        assert_eq!(c.cache_dir(None, BackendKind::Mock), None);
        assert_eq!(c.cache_dir(None, BackendKind::Http), Some(DEFAULT_HTTP_CACHE_DIR.into()));
        assert_eq!(c.cache_dir(Some(Path::new("x")), BackendKind::Mock), Some("x".into()));
    }

    #[test]
    fn http_without_endpoints_is_a_usage_error() {
        let err = ToolConfig::default().build_backend(BackendKind::Http, None).err().unwrap();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn shipped_examples_parse() {
        let c: ToolConfig = toml::from_str(include_str!("../../../config/semslice.example.toml")).unwrap();
        assert_eq!(c.endpoints.len(), 2);
        assert_eq!(c.slice_config(None, None, None).unwrap().label(), "M_fs-div");
        let pricing =
            semslice::eval::CostModel::from_toml(include_str!("../../../config/pricing.example.toml"));
        assert_eq!(pricing.unwrap().models.len(), 2);
    }
}
