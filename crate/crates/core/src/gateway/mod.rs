//! Chat-completion gateway over pluggable backends, with a persistent
//! response cache for offline replay.
//!
//! * `http` calls an OpenAI-compatible endpoint and records every response.
//! * `replay` serves recorded responses only and fails on a miss.
//! * `mock` answers from a script keyed by `record_id/source`; it is not
//!   cached, since nothing it returns costs a network call.

mod cache;
mod http;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{unix_now, CacheEntry, CacheStats, PruneSummary, ResponseCache};
pub use http::{HttpConfig, API_KEY_ENV};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("no cached response for key {key} ({source_key})")]
    CacheMiss { key: String, source_key: String },
    #[error("no API credential: set {}", http::API_KEY_ENV)]
    AuthMissing,
    #[error("mock script has no response for {0:?}")]
    ScriptMiss(String),
    #[error("backend rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("cache I/O at {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reading mock script {path}: {message}")]
    Script { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Hex SHA-256 content hash of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl CompletionRequest {
    /// Pipeline requests always decode at temperature 0.
    pub fn new(model_id: impl Into<String>, user_text: impl Into<String>, max_tokens: u32) -> Self {
        CompletionRequest {
            model_id: model_id.into(),
            system_text: None,
            user_text: user_text.into(),
            temperature: 0.0,
            max_tokens,
        }
    }

    /// Hash of the canonical JSON object (sorted keys) over model id, system
    /// text, user text and temperature. Texts are hashed byte-for-byte.
    pub fn cache_key(&self) -> CacheKey {
        let canonical = serde_json::json!({
            "model_id": self.model_id,
            "system_text": self.system_text,
            "temperature": self.temperature,
            "user_text": self.user_text,
        });
        let bytes = serde_json::to_vec(&canonical).expect("JSON values serialize");
        CacheKey(hex::encode(Sha256::digest(bytes)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!(
                "unknown backend {other:?} (expected http, mock or replay)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
    pub from_cache: bool,
}

/// Scripted responses keyed by `record_id/RoleName` or `record_id/MethodName`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript(pub BTreeMap<String, String>);

impl MockScript {
    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let script_err = |message: String| GatewayError::Script {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| script_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| script_err(e.to_string()))
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.0.insert(key.into(), text.into());
    }
}

pub enum BackendConfig {
    Http(HttpConfig),
    Mock(MockScript),
    Replay,
}

enum Backend {
    Http(http::HttpBackend),
    Mock(MockScript),
    Replay,
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(limit: usize) -> Self {
        Limiter {
            available: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock();
        while *available == 0 {
            self.freed.wait(&mut available);
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Backend,
    cache: Option<ResponseCache>,
    limiter: Limiter,
    in_flight_limit: usize,
    network_requests: AtomicU64,
    peak_in_flight: AtomicU64,
    in_flight: AtomicU64,
}

impl Gateway {
    /// Fails with `AuthMissing` when `http` has no credential.
    pub fn new(
        backend: BackendConfig,
        cache: Option<ResponseCache>,
        in_flight_limit: usize,
    ) -> Result<Self, GatewayError> {
        let backend = match backend {
            BackendConfig::Http(config) => Backend::Http(http::HttpBackend::new(config)?),
            BackendConfig::Mock(script) => Backend::Mock(script),
            BackendConfig::Replay => Backend::Replay,
        };
        Ok(Gateway {
            backend,
            cache,
            limiter: Limiter::new(in_flight_limit),
            in_flight_limit: in_flight_limit.max(1),
            network_requests: AtomicU64::new(0),
            peak_in_flight: AtomicU64::new(0),
            in_flight: AtomicU64::new(0),
        })
    }

    pub fn kind(&self) -> BackendKind {
        match self.backend {
            Backend::Http(_) => BackendKind::Http,
            Backend::Mock(_) => BackendKind::Mock,
            Backend::Replay => BackendKind::Replay,
        }
    }

    pub fn in_flight_limit(&self) -> usize {
        self.in_flight_limit
    }

    /// HTTP attempts issued so far, retries included.
    pub fn network_requests(&self) -> u64 {
        self.network_requests.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous backend calls observed.
    pub fn peak_in_flight(&self) -> u64 {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn cached(&self, req: &CompletionRequest, started: Instant) -> Option<CompletionResponse> {
        let entry = self.cache.as_ref()?.get(&req.cache_key())?;
        Some(CompletionResponse {
            text: entry.response,
            backend: self.kind(),
            latency_ms: started.elapsed().as_millis() as u64,
            from_cache: true,
        })
    }

    /// Cache first for `http` and `replay`. `source_key` names the call
    /// (`record_id/RoleName`); the mock backend looks responses up by it.
    pub fn complete(
        &self,
        req: &CompletionRequest,
        source_key: &str,
    ) -> Result<CompletionResponse, GatewayError> {
        let started = Instant::now();
        if !matches!(self.backend, Backend::Mock(_)) {
            if let Some(hit) = self.cached(req, started) {
                return Ok(hit);
            }
        }
        let text = match &self.backend {
            Backend::Replay => {
                return Err(GatewayError::CacheMiss {
                    key: req.cache_key().to_string(),
                    source_key: source_key.to_string(),
                })
            }
            Backend::Mock(script) => {
                let _permit = self.enter();
                script
                    .0
                    .get(source_key)
                    .cloned()
                    .ok_or_else(|| GatewayError::ScriptMiss(source_key.to_string()))?
            }
            Backend::Http(client) => {
                let _permit = self.enter();
                let text = client.complete(req, || {
                    self.network_requests.fetch_add(1, Ordering::SeqCst);
                })?;
                if let Some(cache) = &self.cache {
                    cache.put(req, &text)?;
                }
                text
            }
        };
        Ok(CompletionResponse {
            text,
            backend: self.kind(),
            latency_ms: started.elapsed().as_millis() as u64,
            from_cache: false,
        })
    }

    fn enter(&self) -> InFlight<'_> {
        let permit = self.limiter.acquire();
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight {
            gateway: self,
            _permit: permit,
        }
    }
}

struct InFlight<'a> {
    gateway: &'a Gateway,
    _permit: Permit<'a>,
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.gateway.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}
