//! Client for chat-completion endpoints that speak the common
//! `{model, messages, temperature, max_tokens}` JSON shape.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{count_tokens, Backend, BackendError, CompletionRequest, CompletionResponse};

fn default_max_in_flight() -> usize {
    8
}

fn default_timeout_secs() -> u64 {
    120
}

/// One configured endpoint. The API key is read from the named environment
/// variable, never from the file itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEndpoint {
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub models: Vec<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    in_flight: Semaphore,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: Option<String>, max_in_flight: usize) -> Self {
        Self::with_timeout(url, api_key, max_in_flight, Duration::from_secs(default_timeout_secs()))
    }

    pub fn with_timeout(
        url: impl Into<String>,
        api_key: Option<String>,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("HTTP client builds with static settings");
        Self { client, url: url.into(), api_key, in_flight: Semaphore::new(max_in_flight) }
    }

    pub fn from_endpoint(ep: &HttpEndpoint) -> Self {
        let api_key = ep.api_key_env.as_deref().and_then(|var| std::env::var(var).ok());
        Self::with_timeout(ep.url.clone(), api_key, ep.max_in_flight, Duration::from_secs(ep.timeout_secs))
    }

    pub fn request_body(req: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt_text}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if let Some(stop) = &req.stop_sequences {
            body["stop"] = json!(stop);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn error_message(body: &str) -> (String, Option<String>) {
    let parsed: Option<Value> = serde_json::from_str(body).ok();
    let err = parsed.as_ref().and_then(|v| v.get("error"));
    let message = err
        .and_then(|e| e.get("message").and_then(Value::as_str).or_else(|| e.as_str()))
        .map(str::to_string)
        .unwrap_or_else(|| body.chars().take(500).collect());
    let code = err.and_then(|e| e.get("code")).and_then(Value::as_str).map(str::to_string);
    (message, code)
}

/// Maps a provider response (status + body) to a completion or error.
pub(crate) fn parse_response(
    req: &CompletionRequest,
    status: u16,
    body: &str,
) -> Result<(String, u64, u64), BackendError> {
    if !(200..300).contains(&status) {
        let (message, code) = error_message(body);
        let lower = message.to_lowercase();
        if code.as_deref() == Some("context_length_exceeded")
            || lower.contains("context length")
            || lower.contains("maximum context")
        {
            return Err(BackendError::ContextLimit(message));
        }
        return Err(BackendError::Provider { status, message });
    }
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    if value.get("error").is_some_and(|e| !e.is_null()) {
        let (message, _) = error_message(body);
        return Err(BackendError::Provider { status, message });
    }
    let parsed: ChatResponse =
        serde_json::from_value(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let text = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::Malformed("response has no choices".into()))?;
    let (input, output) = match parsed.usage {
        Some(Usage { prompt_tokens: Some(i), completion_tokens: Some(o) }) => (i, o),
        _ => (count_tokens(&req.prompt_text), count_tokens(&text)),
    };
    Ok((text, input, output))
}

impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let mut call = self.client.post(&self.url).json(&Self::request_body(req));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| BackendError::Network { attempts: 1, message: e.to_string() })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| BackendError::Network { attempts: 1, message: e.to_string() })?;
        let (text, input_tokens, output_tokens) = parse_response(req, status, &body)?;
        Ok(CompletionResponse {
            text,
            input_tokens,
            output_tokens,
            cached: false,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}
