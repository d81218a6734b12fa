//! Chat-completion client stack: a raw HTTP client for OpenAI-compatible
//! endpoints, a retrying wrapper with exponential backoff, and a
//! content-addressed file cache. The three compose as
//! `CachedClient<RetryingClient<HttpChatClient>>`.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tracelens_core::adapters::{
    AdapterError, ChatRequest, ChatResponse, ModelClient, ResponseFormat, TokenUsage,
};

pub const API_KEY_ENV: &str = "MODEL_API_KEY";
pub const BASE_URL_ENV: &str = "MODEL_BASE_URL";

/// Raw client for an OpenAI-compatible `/chat/completions` endpoint.
/// Texts are forwarded byte-identically; no retries, no cache.
pub struct HttpChatClient {
    base_url: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        HttpChatClient {
            base_url: base_url.into(),
            api_key: api_key.into(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(600))
                .build()
                .expect("http client builds"),
        }
    }

    /// Reads `MODEL_BASE_URL` and `MODEL_API_KEY`.
    pub fn from_env() -> Result<Self, AdapterError> {
        let base_url = std::env::var(BASE_URL_ENV)
            .map_err(|_| AdapterError::Misconfigured(format!("{BASE_URL_ENV} is not set")))?;
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| AdapterError::Misconfigured(format!("missing credential: {API_KEY_ENV} is not set")))?;
        Ok(HttpChatClient::new(base_url, api_key))
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ModelClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, AdapterError> {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(WireMessage {
                role: "system",
                content: &request.system_text,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &request.user_text,
        });

        let mut body = serde_json::json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
        });
        if request.response_format_hint == ResponseFormat::Json {
            body["response_format"] = serde_json::json!({"type": "json_object"});
        }

        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let response = self
            .http
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| AdapterError::Unavailable(format!("request to {url} failed: {e}")))?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AdapterError::AuthError(format!("endpoint returned {status}")));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AdapterError::Unavailable(format!("endpoint returned {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(AdapterError::Misconfigured(format!(
                "endpoint returned {status}: {text}"
            )));
        }

        let wire: WireResponse = response
            .json()
            .map_err(|e| AdapterError::Unavailable(format!("malformed completion body: {e}")))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AdapterError::Unavailable("completion had no choices".to_string()))?;
        let usage = wire.usage.unwrap_or_default();

        Ok(ChatResponse {
            content,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            from_cache: false,
        })
    }
}

/// Retries transient failures with exponential backoff. Only
/// [`AdapterError::Unavailable`] is considered transient.
pub struct RetryingClient<C> {
    inner: C,
    max_retries: u32,
    initial_backoff: Duration,
}

impl<C> RetryingClient<C> {
    pub fn new(inner: C, max_retries: u32) -> Self {
        RetryingClient {
            inner,
            max_retries,
            initial_backoff: Duration::from_millis(500),
        }
    }

    pub fn with_backoff(mut self, initial: Duration) -> Self {
        self.initial_backoff = initial;
        self
    }
}

impl<C: ModelClient> ModelClient for RetryingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, AdapterError> {
        let mut attempt = 0;
        loop {
            match self.inner.complete(request) {
                Ok(response) => return Ok(response),
                Err(AdapterError::Unavailable(msg)) => {
                    if attempt >= self.max_retries {
                        return Err(AdapterError::Unavailable(format!(
                            "retries exhausted after {attempt} attempts: {msg}"
                        )));
                    }
                    std::thread::sleep(self.initial_backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(other) => return Err(other),
            }
        }
    }
}

/// One cache file per request key: a JSON envelope holding the request
/// digest and the response content.
#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    model_id: String,
    temperature: f64,
    content: String,
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Content-addressed file cache keyed by
/// `(model_id, system_text, user_text, temperature)`. The first completion
/// for a key wins; concurrent writers of the same key converge on one file
/// and all later reads return bit-identical content.
pub struct CachedClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C> CachedClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CachedClient { inner, dir })
    }
}

pub fn cache_key(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.model_id.as_bytes());
    hasher.update([0]);
    hasher.update(request.system_text.as_bytes());
    hasher.update([0]);
    hasher.update(request.user_text.as_bytes());
    hasher.update([0]);
    hasher.update(request.temperature.to_bits().to_le_bytes());
    hex::encode(hasher.finalize())
}

impl<C: ModelClient> ModelClient for CachedClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, AdapterError> {
        let key = cache_key(request);
        let path = self.dir.join(format!("{key}.json"));

        let read_entry = |path: &std::path::Path| -> Option<ChatResponse> {
            let text = std::fs::read_to_string(path).ok()?;
            let entry: CacheEntry = serde_json::from_str(&text).ok()?;
            Some(ChatResponse {
                content: entry.content,
                usage: TokenUsage {
                    prompt_tokens: entry.prompt_tokens,
                    completion_tokens: entry.completion_tokens,
                },
                from_cache: true,
            })
        };

        if let Some(response) = read_entry(&path) {
            return Ok(response);
        }

        let response = self.inner.complete(request)?;
        let entry = CacheEntry {
            key: key.clone(),
            model_id: request.model_id.clone(),
            temperature: request.temperature,
            content: response.content.clone(),
            prompt_tokens: response.usage.prompt_tokens,
            completion_tokens: response.usage.completion_tokens,
        };
        // create_new loses the race to a concurrent writer; the winner's
        // entry is then served, keeping reads bit-identical per key.
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(file) => {
                use std::io::Write;
                let mut file = file;
                let body =
                    serde_json::to_vec_pretty(&entry).expect("cache entries serialize");
                if file.write_all(&body).is_err() {
                    log::warn!("failed to persist cache entry {key}");
                }
                Ok(response)
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Ok(read_entry(&path).unwrap_or(response))
            }
            Err(e) => {
                log::warn!("cache write failed for {key}: {e}");
                Ok(response)
            }
        }
    }
}
