//! Deterministic scripted backend for offline runs and tests.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{count_tokens, Backend, BackendError, CompletionRequest, CompletionResponse};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Fail { transient: bool, message: String },
}

type Rule = Box<dyn Fn(&CompletionRequest) -> Option<MockReply> + Send + Sync>;

/// Declarative mock configuration, loadable from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    /// Answer `yes` to labeling prompts whose text contains any of these
    /// (case-insensitive), `no` otherwise.
    #[serde(default)]
    pub keywords: Vec<String>,
    /// Exact prompt -> reply table, consulted before the keyword rule.
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    /// Reply for prompts nothing else matched.
    #[serde(default)]
    pub default: Option<String>,
}

/// Lookup order: exact prompt table, rules in insertion order, default reply.
pub struct MockBackend {
    table: BTreeMap<String, String>,
    rules: Vec<Rule>,
    default: Option<String>,
    fail_first: usize,
    calls: AtomicUsize,
    transcript: Mutex<Vec<(String, String)>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self {
            table: BTreeMap::new(),
            rules: Vec::new(),
            default: None,
            fail_first: 0,
            calls: AtomicUsize::new(0),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Replies `text` to everything.
    pub fn constant(text: impl Into<String>) -> Self {
        Self::new().default_reply(text)
    }

    pub fn from_spec(spec: &MockSpec) -> Self {
        let mut mock = Self::new();
        for (prompt, reply) in &spec.responses {
            mock = mock.script(prompt.clone(), reply.clone());
        }
        if !spec.keywords.is_empty() {
            mock = mock.keyword_rule(spec.keywords.clone());
        }
        mock.default = spec.default.clone();
        mock
    }

    pub fn script(mut self, prompt: impl Into<String>, reply: impl Into<String>) -> Self {
        self.table.insert(prompt.into(), reply.into());
        self
    }

    pub fn rule<F>(mut self, f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Option<MockReply> + Send + Sync + 'static,
    {
        self.rules.push(Box::new(f));
        self
    }

    /// Labels the text of yes/no prompts by keyword containment.
    pub fn keyword_rule(self, keywords: Vec<String>) -> Self {
        let keywords: Vec<String> = keywords.into_iter().map(|k| k.to_lowercase()).collect();
        self.rule(move |req| {
            let text = Self::labeled_text(&req.prompt_text)?.to_lowercase();
            let hit = keywords.iter().any(|k| text.contains(k.as_str()));
            Some(MockReply::Text(if hit { "yes" } else { "no" }.to_string()))
        })
    }

    pub fn default_reply(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    /// Fail the first `n` calls with a transient network error.
    pub fn fail_first(mut self, n: usize) -> Self {
        self.fail_first = n;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// `(prompt, reply)` pairs in call order.
    pub fn transcript(&self) -> Vec<(String, String)> {
        self.transcript.lock().expect("transcript poisoned").clone()
    }

    /// The text under classification in a yes/no labeling prompt: whatever
    /// follows the final `Text: ` line when the prompt ends in `Answer: `.
    pub fn labeled_text(prompt: &str) -> Option<&str> {
        let body = prompt.strip_suffix("\nAnswer: ")?;
        match body.rfind("\nText: ") {
            Some(i) => Some(&body[i + "\nText: ".len()..]),
            None => body.strip_prefix("Text: "),
        }
    }

    fn lookup(&self, req: &CompletionRequest) -> Option<MockReply> {
        if let Some(t) = self.table.get(&req.prompt_text) {
            return Some(MockReply::Text(t.clone()));
        }
        self.rules.iter().find_map(|r| r(req)).or_else(|| self.default.clone().map(MockReply::Text))
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        if n < self.fail_first {
            return Err(BackendError::Network {
                attempts: 1,
                message: format!("scripted failure {}", n + 1),
            });
        }
        let text = match self.lookup(req) {
            Some(MockReply::Text(t)) => t,
            Some(MockReply::Fail { transient: true, message }) => {
                return Err(BackendError::Network { attempts: 1, message })
            }
            Some(MockReply::Fail { transient: false, message }) => {
                return Err(BackendError::Provider { status: 400, message })
            }
            None => {
                return Err(BackendError::Provider {
                    status: 400,
                    message: "mock has no reply for this prompt".into(),
                })
            }
        };
        self.transcript.lock().expect("transcript poisoned").push((req.prompt_text.clone(), text.clone()));
        Ok(CompletionResponse {
            input_tokens: count_tokens(&req.prompt_text),
            output_tokens: count_tokens(&text),
            text,
            cached: false,
            latency_ms: 0.0,
        })
    }
}
