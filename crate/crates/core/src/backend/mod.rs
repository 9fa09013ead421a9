//! Text-completion backends.
//!
//! Every model call in the pipeline reduces to [`Backend::complete`]. The
//! concrete backends compose as layers:
//!
//! ```text
//! CachedBackend -> Router -> Retrying<HttpBackend>   (per endpoint)
//!                         -> MockBackend             (offline)
//! ```

mod cache;
mod http;
mod mock;
mod retry;
mod tokens;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheEntry, CachedBackend};
pub use http::{HttpBackend, HttpEndpoint};
pub use mock::{MockBackend, MockReply, MockSpec};
pub use retry::{RetryPolicy, Retrying};
pub use tokens::{count_tokens, TokenCounter, DEFAULT_FUDGE};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("no backend configured for model {0:?}")]
    UnconfiguredModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("provider returned {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("request exceeds the provider context limit: {0}")]
    ContextLimit(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl BackendError {
    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Network { .. } => true,
            BackendError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_sequences: Option<Vec<String>>,
    /// Skip cache reads for this call (the response is still stored).
    #[serde(skip)]
    pub refresh: bool,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, prompt_text: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            prompt_text: prompt_text.into(),
            temperature: 0.0,
            max_output_tokens: 256,
            stop_sequences: None,
            refresh: false,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt_text.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cached: bool,
    pub latency_ms: f64,
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

/// Which job a model performs in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Annotates the whole dataset; optionally labels few-shot examples.
    Student,
    /// Labels few-shot examples.
    Teacher,
    /// Writes and refines instructions, synthesizes examples.
    Generator,
}

/// A role bound to a model and its decoding defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub role: Role,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl RoleBinding {
    /// Creative steps run at temperature 1.
    pub fn generator(model_id: impl Into<String>) -> Self {
        Self { role: Role::Generator, model_id: model_id.into(), temperature: 1.0, max_output_tokens: 1024 }
    }

    /// Classification steps run at temperature 0 and only need a label token.
    pub fn classifier(role: Role, model_id: impl Into<String>) -> Self {
        Self { role, model_id: model_id.into(), temperature: 0.0, max_output_tokens: 5 }
    }

    pub fn request(&self, prompt_text: impl Into<String>) -> CompletionRequest {
        CompletionRequest::new(self.model_id.clone(), prompt_text)
            .temperature(self.temperature)
            .max_output_tokens(self.max_output_tokens)
    }
}

/// Dispatches requests to the backend registered for their model id.
#[derive(Default, Clone)]
pub struct Router {
    routes: BTreeMap<String, Arc<dyn Backend>>,
}

impl Router {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(mut self, model_id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.routes.insert(model_id.into(), backend);
        self
    }

    pub fn insert(&mut self, model_id: impl Into<String>, backend: Arc<dyn Backend>) {
        self.routes.insert(model_id.into(), backend);
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.routes.keys().map(String::as_str)
    }
}

impl Backend for Router {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        let backend = self
            .routes
            .get(&req.model_id)
            .ok_or_else(|| BackendError::UnconfiguredModel(req.model_id.clone()))?;
        backend.complete(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn router_rejects_unconfigured_model() {
        let router = Router::new().route("student", Arc::new(MockBackend::constant("yes")));
        let err = router.complete(&CompletionRequest::new("teacher", "Q")).unwrap_err();
        assert!(matches!(err, BackendError::UnconfiguredModel(m) if m == "teacher"));
        let ok = router.complete(&CompletionRequest::new("student", "Q")).unwrap();
        assert_eq!(ok.text, "yes");
    }

    #[test]
    fn request_validation() {
        assert!(CompletionRequest::new("m", "").validate().is_err());
        assert!(CompletionRequest::new("m", "p").temperature(f64::NAN).validate().is_err());
        assert!(CompletionRequest::new("m", "p").temperature(2.5).validate().is_err());
        assert!(CompletionRequest::new("m", "p").max_output_tokens(0).validate().is_err());
        assert!(CompletionRequest::new("m", "p").temperature(2.0).validate().is_ok());
    }

    #[test]
    fn transient_classification() {
        assert!(BackendError::Network { attempts: 1, message: String::new() }.is_transient());
        assert!(BackendError::Provider { status: 429, message: String::new() }.is_transient());
        assert!(BackendError::Provider { status: 503, message: String::new() }.is_transient());
        assert!(!BackendError::Provider { status: 401, message: String::new() }.is_transient());
        assert!(!BackendError::ContextLimit(String::new()).is_transient());
    }
}
