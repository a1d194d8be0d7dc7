//! Uniform text-generation interface over HTTP endpoints, deterministic
//! mocks and cache replay, with prompt templating and a content-addressed
//! response cache.

mod backend;
mod cache;
mod template;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backend::{
    Backend, BackendKind, BackendSpec, HttpChatBackend, IdentityBackend, ReplayBackend,
    RulesBackend, API_KEY_ENV,
};
pub use cache::{CacheEntry, ResponseCache};
pub use template::{render_prompt, PromptTemplate, TemplateError, TemplateTask};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("request {key}: HTTP error: {message}")]
    Http { key: String, message: String },
    #[error("request {key}: not in cache")]
    CacheMiss { key: String },
    #[error("request {key}: cache I/O: {message}")]
    CacheIo { key: String, message: String },
    #[error("request {key}: backend error: {message}")]
    Backend { key: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn key(&self) -> Option<&str> {
        match self {
            GatewayError::Http { key, .. }
            | GatewayError::CacheMiss { key }
            | GatewayError::CacheIo { key, .. }
            | GatewayError::Backend { key, .. } => Some(key),
            GatewayError::InvalidRequest(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Decoding settings shared by every request of one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub model_name: String,
    pub temperature: f64,
    pub num_beams: u32,
    pub seed: u64,
    pub max_new_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model_name: "default".to_owned(),
            temperature: 0.1,
            num_beams: 4,
            seed: 0,
            max_new_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    /// Only the first beam or sample is ever consumed.
    pub num_beams_or_samples: u32,
    pub seed: u64,
    pub max_new_tokens: u32,
    pub model_name: String,
    /// The raw text bound to `{input}`. Mock backends transform this rather
    /// than the full rendered prompt. Not part of the cache key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

impl GenerationRequest {
    pub fn new(messages: Vec<Message>, params: &GenerationParams) -> Self {
        Self {
            messages,
            temperature: params.temperature,
            num_beams_or_samples: params.num_beams,
            seed: params.seed,
            max_new_tokens: params.max_new_tokens,
            model_name: params.model_name.clone(),
            input: None,
        }
    }

    /// Renders `template` over `input` and records the payload.
    pub fn from_template(
        template: &PromptTemplate,
        input: &str,
        label_hint: Option<&str>,
        params: &GenerationParams,
    ) -> Result<Self, TemplateError> {
        let mut req = Self::new(render_prompt(template, input, label_hint)?, params);
        req.input = Some(input.to_owned());
        Ok(req)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Text a mock backend operates on: the bound input if known, else the
    /// last user message.
    pub fn payload(&self) -> &str {
        match &self.input {
            Some(input) => input,
            None => self
                .messages
                .iter()
                .rev()
                .find(|m| m.role == Role::User)
                .map(|m| m.content.as_str())
                .unwrap_or(""),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest(
                "at least one user message is required".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// SHA-256 over the canonical JSON of the fields that determine a response.
pub fn request_key(kind: BackendKind, req: &GenerationRequest) -> String {
    let canonical = serde_json::json!({
        "kind": kind.name(),
        "model": req.model_name,
        "messages": req.messages,
        "temperature": req.temperature,
        "seed": req.seed,
        "max_new_tokens": req.max_new_tokens,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub network_requests: u64,
}

pub const DEFAULT_MAX_INFLIGHT: usize = 4;

struct Limiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Thread-safe front for one backend: bounds in-flight calls, counts them,
/// and optionally caches responses on disk.
pub struct Gateway {
    backend: Box<dyn Backend>,
    key_kind: BackendKind,
    cache: Option<ResponseCache>,
    limiter: Limiter,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("key_kind", &self.key_kind)
            .field("cache", &self.cache)
            .field("max_inflight", &self.limiter.max)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn from_spec(
        spec: &BackendSpec,
        cache_dir: Option<&Path>,
        max_inflight: usize,
    ) -> Result<Self, GatewayError> {
        let cache = cache_dir.map(ResponseCache::new);
        let backend: Box<dyn Backend> = match spec {
            BackendSpec::HttpChat {
                endpoint_url,
                timeout_secs,
                retries,
                backoff_ms,
            } => Box::new(HttpChatBackend::new(
                endpoint_url,
                *timeout_secs,
                *retries,
                *backoff_ms,
            )?),
            BackendSpec::MockIdentity => Box::new(IdentityBackend),
            BackendSpec::MockRules { rules, seed } => {
                Box::new(RulesBackend::new(rules.clone(), *seed))
            }
            BackendSpec::Replay { .. } => Box::new(ReplayBackend::new(cache.clone())),
        };
        Ok(Self::with_backend(
            backend,
            spec.cache_kind(),
            cache,
            max_inflight,
        ))
    }

    pub fn with_backend(
        backend: Box<dyn Backend>,
        key_kind: BackendKind,
        cache: Option<ResponseCache>,
        max_inflight: usize,
    ) -> Self {
        Self {
            backend,
            key_kind,
            cache,
            limiter: Limiter::new(max_inflight),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn max_inflight(&self) -> usize {
        self.limiter.max
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn key(&self, req: &GenerationRequest) -> String {
        request_key(self.key_kind, req)
    }

    /// Calls the backend directly, bypassing the cache for lookups.
    pub fn generate(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let key = self.key(req);
        let _permit = self.limiter.acquire();
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        self.backend.complete(req, &key)
    }

    /// Returns the cached response when present; otherwise generates and
    /// stores it. Replay gateways never store.
    pub fn cached_generate(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let Some(cache) = &self.cache else {
            return self.generate(req);
        };
        let key = self.key(req);
        if let Some(entry) = cache.get(&key)? {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(entry.response);
        }
        let text = self.generate(req)?;
        cache.put(&key, req, &text)?;
        Ok(text)
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            network_requests: self.backend.network_requests(),
        }
    }
}
