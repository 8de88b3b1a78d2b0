//! OpenAI-compatible chat-completions client with retries, rate limiting
//! and a content-addressed response cache.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::utc_now;
use crate::error::{Error, Result};

/// Settings for one elicitation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmRunConfig {
    /// Base URL; requests go to `{endpoint_url}/chat/completions`.
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env_var_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub request_timeout_secs: f64,
    /// First backoff delay; doubles on every retry.
    pub backoff_base_ms: u64,
    pub cache_dir: Option<PathBuf>,
    /// Requests in flight at once.
    pub concurrency: usize,
    /// Token-bucket refill rate; `None` disables rate limiting.
    pub requests_per_second: Option<f64>,
}

impl Default for LlmRunConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo-instruct".into(),
            api_key_env_var_name: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_tokens: 256,
            max_retries: 3,
            request_timeout_secs: 60.0,
            backoff_base_ms: 500,
            cache_dir: None,
            concurrency: 4,
            requests_per_second: None,
        }
    }
}

impl LlmRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::OutOfRange(format!(
                "temperature must be finite and ≥ 0, got {}",
                self.temperature
            )));
        }
        if self.concurrency == 0 {
            return Err(Error::OutOfRange("concurrency must be ≥ 1".into()));
        }
        if !(self.request_timeout_secs > 0.0) {
            return Err(Error::OutOfRange("request_timeout_secs must be > 0".into()));
        }
        if let Some(r) = self.requests_per_second {
            if !(r > 0.0) {
                return Err(Error::OutOfRange("requests_per_second must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body for `/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn user(model: &str, prompt: &str, temperature: f64, max_tokens: u32) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature,
            max_tokens,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or_default()
    }
}

/// Sends one chat request and returns the assistant's text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// Reads the API key from the configured environment variable, if set.
    pub fn new(cfg: &LlmRunConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env_var_name).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            warn!("{} is not set; sending requests without authorization", cfg.api_key_env_var_name);
        }
        Ok(Self {
            client,
            url: format!("{}/chat/completions", cfg.endpoint_url.trim_end_matches('/')),
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Error::Transport(format!("HTTP {status}: {body}")));
        }
        let body: ChatResponse = resp
            .json()
            .map_err(|e| Error::Transport(format!("malformed response body: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("response has no choices".into()))
    }
}

/// Identity of a cached completion. `sample` distinguishes repeated draws of
/// the same prompt (feature-generation repetitions, re-queries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub sample: u32,
}

impl CacheKey {
    /// SHA-256 over the canonical JSON encoding of the key.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("cache key serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: CacheKey,
    pub response: String,
    pub timestamp: String,
}

/// One JSON file per content hash.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        let path = self.path(key);
        match std::fs::read(&path) {
            Ok(bytes) => {
                let entry: CacheEntry = serde_json::from_slice(&bytes)?;
                // a hash match with a different key would mean a corrupt file
                Ok((entry.request == *key).then_some(entry))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, key: &CacheKey, response: &str) -> Result<()> {
        let entry = CacheEntry {
            request: key.clone(),
            response: response.to_string(),
            timestamp: utc_now(),
        };
        let path = self.path(key);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        Self {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.rate).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// A completion and whether it came from the cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
}

pub struct LlmClient {
    transport: Arc<dyn ChatTransport>,
    cfg: LlmRunConfig,
    cache: Option<ResponseCache>,
    limiter: Option<TokenBucket>,
    network_calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn ChatTransport>, cfg: LlmRunConfig) -> Result<Self> {
        cfg.validate()?;
        let cache = cfg.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        let limiter = cfg.requests_per_second.map(TokenBucket::new);
        Ok(Self {
            transport,
            cfg,
            cache,
            limiter,
            network_calls: AtomicUsize::new(0),
        })
    }

    /// Client speaking HTTP to `cfg.endpoint_url`.
    pub fn http(cfg: LlmRunConfig) -> Result<Self> {
        let transport = Arc::new(HttpTransport::new(&cfg)?);
        Self::new(transport, cfg)
    }

    pub fn config(&self) -> &LlmRunConfig {
        &self.cfg
    }

    /// Requests that reached the transport (retries included).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// Completes `prompt`, consulting the cache first. Transport failures are
    /// retried with exponential backoff up to `max_retries` times.
    pub fn complete(&self, prompt: &str, sample: u32) -> Result<Completion> {
        let key = CacheKey {
            model: self.cfg.model_name.clone(),
            prompt: prompt.to_string(),
            temperature: self.cfg.temperature,
            sample,
        };
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                return Ok(Completion {
                    text: entry.response,
                    cached: true,
                });
            }
        }
        let request = ChatRequest::user(&self.cfg.model_name, prompt, self.cfg.temperature, self.cfg.max_tokens);
        let mut attempt = 0;
        let text = loop {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            match self.transport.complete(&request) {
                Ok(text) => break text,
                Err(e) if attempt < self.cfg.max_retries => {
                    let delay = self.cfg.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                    warn!("request failed ({e}); retry {} in {delay} ms", attempt + 1);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) => {
                    return Err(Error::Transport(format!(
                        "giving up after {} attempt(s): {e}",
                        attempt + 1
                    )))
                }
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        debug!("completion for {prompt:?}: {text:?}");
        Ok(Completion { text, cached: false })
    }
}
