use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::ResponseCache;
use super::{GatewayError, GenerationRequest};

/// Environment variable holding the bearer token for HTTP endpoints.
pub const API_KEY_ENV: &str = "ROI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    MockIdentity,
    MockRules,
    Replay,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::HttpChat => "http_chat",
            BackendKind::MockIdentity => "mock_identity",
            BackendKind::MockRules => "mock_rules",
            BackendKind::Replay => "replay",
        }
    }
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_replays() -> BackendKind {
    BackendKind::HttpChat
}

/// Declarative description of a generation backend.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    HttpChat {
        endpoint_url: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
    },
    #[default]
    MockIdentity,
    /// Word-by-word substitution. A word with several options picks one per
    /// request from a generator seeded by `(seed, request.seed)`.
    MockRules {
        #[serde(default)]
        rules: BTreeMap<String, Vec<String>>,
        #[serde(default)]
        seed: u64,
    },
    /// Serves cached responses only. `replays` names the backend kind whose
    /// cache entries are served, since the kind is part of the cache key.
    Replay {
        #[serde(default = "default_replays")]
        replays: BackendKind,
    },
}

impl BackendSpec {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSpec::HttpChat { .. } => BackendKind::HttpChat,
            BackendSpec::MockIdentity => BackendKind::MockIdentity,
            BackendSpec::MockRules { .. } => BackendKind::MockRules,
            BackendSpec::Replay { .. } => BackendKind::Replay,
        }
    }

    /// Kind that goes into cache keys.
    pub fn cache_kind(&self) -> BackendKind {
        match self {
            BackendSpec::Replay { replays } => *replays,
            other => other.kind(),
        }
    }

    pub fn rules(pairs: &[(&str, &[&str])], seed: u64) -> Self {
        BackendSpec::MockRules {
            rules: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
            seed,
        }
    }
}

/// A text-generation backend. `key` is the request's cache key, used to tag
/// errors.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &GenerationRequest, key: &str) -> Result<String, GatewayError>;

    /// HTTP requests issued so far.
    fn network_requests(&self) -> u64 {
        0
    }
}

pub struct IdentityBackend;

impl Backend for IdentityBackend {
    fn complete(&self, request: &GenerationRequest, _key: &str) -> Result<String, GatewayError> {
        Ok(request.payload().to_owned())
    }
}

pub struct RulesBackend {
    rules: BTreeMap<String, Vec<String>>,
    seed: u64,
}

impl RulesBackend {
    pub fn new(rules: BTreeMap<String, Vec<String>>, seed: u64) -> Self {
        Self { rules, seed }
    }
}

impl Backend for RulesBackend {
    fn complete(&self, request: &GenerationRequest, _key: &str) -> Result<String, GatewayError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ request.seed.rotate_left(32));
        let words: Vec<&str> = request
            .payload()
            .split_whitespace()
            .map(|w| match self.rules.get(w).map(Vec::as_slice) {
                None | Some([]) => w,
                Some([only]) => only.as_str(),
                Some(options) => options[rng.random_range(0..options.len())].as_str(),
            })
            .collect();
        Ok(words.join(" "))
    }
}

pub struct ReplayBackend {
    cache: Option<ResponseCache>,
}

impl ReplayBackend {
    pub fn new(cache: Option<ResponseCache>) -> Self {
        Self { cache }
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, _request: &GenerationRequest, key: &str) -> Result<String, GatewayError> {
        let miss = || GatewayError::CacheMiss {
            key: key.to_owned(),
        };
        let cache = self.cache.as_ref().ok_or_else(miss)?;
        cache.get(key)?.map(|e| e.response).ok_or_else(miss)
    }
}

/// OpenAI-style chat completions over HTTP.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    retries: u32,
    backoff: Duration,
    requests: AtomicU64,
}

impl HttpChatBackend {
    pub fn new(
        endpoint_url: &str,
        timeout_secs: u64,
        retries: u32,
        backoff_ms: u64,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| GatewayError::Http {
                key: String::new(),
                message: format!("building HTTP client: {e}"),
            })?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", endpoint_url.trim_end_matches('/')),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retries,
            backoff: Duration::from_millis(backoff_ms),
            requests: AtomicU64::new(0),
        })
    }

    pub fn request_body(request: &GenerationRequest) -> Value {
        json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "seed": request.seed,
            "max_tokens": request.max_new_tokens,
        })
    }

    fn attempt(&self, body: &Value, key: &str) -> Result<String, (bool, GatewayError)> {
        let http_err = |message: String| GatewayError::Http {
            key: key.to_owned(),
            message,
        };
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.client.post(&self.url).json(body);
        if let Some(token) = &self.api_key {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| (true, http_err(e.to_string())))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            let text = resp.text().unwrap_or_default();
            return Err((retryable, http_err(format!("status {status}: {text}"))));
        }
        let value: Value = resp
            .json()
            .map_err(|e| (false, http_err(format!("invalid JSON: {e}"))))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| {
                (
                    false,
                    http_err("response lacks choices[0].message.content".into()),
                )
            })
    }
}

impl Backend for HttpChatBackend {
    fn complete(&self, request: &GenerationRequest, key: &str) -> Result<String, GatewayError> {
        let body = Self::request_body(request);
        let mut tries = 0;
        loop {
            match self.attempt(&body, key) {
                Ok(text) => return Ok(text),
                Err((true, _)) if tries < self.retries => {
                    thread::sleep(self.backoff * 2u32.pow(tries));
                    tries += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }

    fn network_requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}
