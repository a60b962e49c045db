//! Chat-completion client: token budgeting, bounded concurrency, retries.
//!
//! [`Client`] owns everything that is independent of the wire protocol. The
//! protocol itself sits behind [`Transport`]: [`HttpTransport`] speaks the
//! OpenAI and Gemini dialects, [`StubTransport`] replays fixture files for
//! offline runs and tests.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::fsio::sha256_hex;
use crate::prompts::{PromptBundle, PromptKind};

/// Rough token count: a quarter of the character count, plus a 10% margin,
/// both rounded up.
///
/// ```
/// use corpus_annotate::provider::estimate_tokens;
/// assert_eq!(estimate_tokens(""), 0);
/// assert_eq!(estimate_tokens(&"x".repeat(4000)), 1100);
/// ```
pub fn estimate_tokens(text: &str) -> u64 {
    estimate_tokens_for_chars(text.chars().count() as u64)
}

pub fn estimate_tokens_for_chars(chars: u64) -> u64 {
    let raw = chars.div_ceil(4);
    (raw * 11).div_ceil(10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    #[default]
    Gemini,
    OpenAi,
    Stub,
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gemini" => Ok(Dialect::Gemini),
            "openai" => Ok(Dialect::OpenAi),
            "stub" => Ok(Dialect::Stub),
            other => Err(format!(
                "unknown dialect `{other}` (expected gemini, openai or stub)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub dialect: Dialect,
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub context_window_tokens: u64,
    pub max_output_tokens: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_inflight: usize,
    /// Sampling temperature. Left at 0 for reproducibility.
    pub temperature: f64,
    /// Send persona and instructions as a system message instead of one
    /// combined user message.
    pub system_message: bool,
    pub request_timeout_secs: u64,
    /// Fixture directory for the stub dialect.
    pub stub_fixtures: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            dialect: Dialect::Gemini,
            base_url: "https://generativelanguage.googleapis.com/v1beta".into(),
            model_name: "gemini-2.5-pro".into(),
            api_key_env: "GEMINI_API_KEY".into(),
            context_window_tokens: 1_000_000,
            max_output_tokens: 65_536,
            max_retries: 5,
            backoff_base_ms: 1_000,
            max_inflight: 4,
            temperature: 0.0,
            system_message: false,
            request_timeout_secs: 900,
            stub_fixtures: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::Config(m.to_string()));
        if self.context_window_tokens == 0 || self.max_output_tokens == 0 {
            return bad("context_window_tokens and max_output_tokens must be positive");
        }
        if self.context_window_tokens < self.max_output_tokens {
            return bad("context_window_tokens must be at least max_output_tokens");
        }
        if self.max_inflight == 0 {
            return bad("max_inflight must be at least 1");
        }
        if self.backoff_base_ms == 0 {
            return bad("backoff_base_ms must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        Ok(())
    }

    /// Tokens left for prompt and payload once the output reservation is taken.
    pub fn input_budget(&self) -> u64 {
        self.context_window_tokens
            .saturating_sub(self.max_output_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error(
        "request needs ~{required} tokens but the context window allows {available}; split the input"
    )]
    ContextOverflow { required: u64, available: u64 },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("request rejected after {attempts} attempt(s): {message}")]
    Rejected { attempts: u32, message: String },
    #[error("provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Timeouts, rate limits, 5xx: worth retrying.
    Transient,
    Auth,
    /// Anything retrying will not fix.
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub kind: FailureKind,
    pub message: String,
}

impl TransportError {
    pub fn transient(m: impl Into<String>) -> Self {
        TransportError {
            kind: FailureKind::Transient,
            message: m.into(),
        }
    }
    pub fn auth(m: impl Into<String>) -> Self {
        TransportError {
            kind: FailureKind::Auth,
            message: m.into(),
        }
    }
    pub fn fatal(m: impl Into<String>) -> Self {
        TransportError {
            kind: FailureKind::Fatal,
            message: m.into(),
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// What the client hands to a transport.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub kind: PromptKind,
    pub refs: Vec<String>,
    pub model: String,
    pub system: Option<String>,
    pub user: String,
    pub max_output_tokens: u64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reply {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<Reply, TransportError>;
}

/// Counting semaphore bounding outstanding requests.
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            permits: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.freed.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Delay before retry number `attempt` (zero-based): `base * 2^attempt`,
/// jittered by ±25%, capped at 60 s.
pub fn backoff_delay(base_ms: u64, attempt: u32, rng: &mut impl Rng) -> Duration {
    const CAP_MS: f64 = 60_000.0;
    let nominal = base_ms as f64 * 2f64.powi(attempt.min(30) as i32);
    let jitter = rng.random_range(0.75..=1.25);
    Duration::from_millis((nominal * jitter).min(CAP_MS) as u64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Usage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub struct Client {
    config: ProviderConfig,
    transport: Arc<dyn Transport>,
    limiter: Limiter,
    audit: Option<Mutex<File>>,
    secret: Option<String>,
    calls: AtomicU64,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("dialect", &self.config.dialect)
            .field("model", &self.config.model_name)
            .finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(
        config: ProviderConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Client {
            limiter: Limiter::new(config.max_inflight),
            config,
            transport,
            audit: None,
            secret: None,
            calls: AtomicU64::new(0),
            input_tokens: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        })
    }

    /// Builds the transport named by `config.dialect`. HTTP dialects read the
    /// key from the environment variable `config.api_key_env`.
    pub fn from_config(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        match config.dialect {
            Dialect::Stub => {
                let dir = config.stub_fixtures.clone().ok_or_else(|| {
                    ProviderError::Config("the stub dialect needs stub_fixtures".into())
                })?;
                Client::new(config, Arc::new(StubTransport::from_dir(dir)))
            }
            Dialect::Gemini | Dialect::OpenAi => {
                let key = std::env::var(&config.api_key_env)
                    .ok()
                    .filter(|k| !k.trim().is_empty())
                    .ok_or_else(|| {
                        ProviderError::Auth(format!(
                            "environment variable {} is not set",
                            config.api_key_env
                        ))
                    })?;
                let transport = HttpTransport::new(&config, key.clone());
                let mut client = Client::new(config, Arc::new(transport))?;
                client.secret = Some(key);
                Ok(client)
            }
        }
    }

    /// Appends one JSON line per call to `path`.
    pub fn with_audit(mut self, path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn usage(&self) -> Usage {
        Usage {
            calls: self.calls.load(Ordering::Relaxed),
            input_tokens: self.input_tokens.load(Ordering::Relaxed),
            output_tokens: self.output_tokens.load(Ordering::Relaxed),
        }
    }

    /// Fails with `ContextOverflow` unless the bundle plus `payload` fits.
    pub fn check_budget(&self, bundle: &PromptBundle, payload: &str) -> Result<u64, ProviderError> {
        let required = bundle.estimated_tokens + estimate_tokens(payload);
        let available = self.config.input_budget();
        if required > available {
            return Err(ProviderError::ContextOverflow {
                required,
                available,
            });
        }
        Ok(required)
    }

    fn request(&self, bundle: &PromptBundle, payload: &str) -> ChatRequest {
        let (system, user) = if self.config.system_message {
            let mut user = bundle.payload.clone();
            user.push_str(payload);
            (Some(bundle.preamble()), user)
        } else {
            (None, bundle.render_with(payload))
        };
        ChatRequest {
            kind: bundle.kind,
            refs: bundle.payload_refs.clone(),
            model: self.config.model_name.clone(),
            system,
            user,
            max_output_tokens: self.config.max_output_tokens,
            temperature: self.config.temperature,
        }
    }

    /// Sends `bundle` with `payload` appended, retrying transient failures.
    pub fn complete(
        &self,
        bundle: &PromptBundle,
        payload: &str,
    ) -> Result<ModelResponse, ProviderError> {
        let estimated_input = self.check_budget(bundle, payload)?;
        let req = self.request(bundle, payload);
        let started = Instant::now();
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            let sent = {
                let _permit = self.limiter.acquire();
                self.calls.fetch_add(1, Ordering::Relaxed);
                self.transport.send(&req)
            };
            match sent {
                Ok(reply) => break Ok(reply),
                Err(e)
                    if e.kind == FailureKind::Transient && attempts <= self.config.max_retries =>
                {
                    let delay =
                        backoff_delay(self.config.backoff_base_ms, attempts - 1, &mut rand::rng());
                    log::warn!(
                        "transient failure (attempt {attempts}): {}; retrying in {delay:?}",
                        self.redact(&e.message)
                    );
                    std::thread::sleep(delay);
                }
                Err(e) => {
                    let message = self.redact(&e.message);
                    break Err(match e.kind {
                        FailureKind::Transient => ProviderError::ExhaustedRetries {
                            attempts,
                            last: message,
                        },
                        FailureKind::Auth => ProviderError::Auth(message),
                        FailureKind::Fatal => ProviderError::Rejected { attempts, message },
                    });
                }
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        self.audit_entry(&req, &outcome, attempts, latency_ms);
        let reply = outcome?;
        let response = ModelResponse {
            input_tokens: reply.input_tokens.unwrap_or(estimated_input),
            output_tokens: reply
                .output_tokens
                .unwrap_or_else(|| estimate_tokens(&reply.text)),
            text: reply.text,
            latency_ms,
            attempts,
        };
        self.input_tokens
            .fetch_add(response.input_tokens, Ordering::Relaxed);
        self.output_tokens
            .fetch_add(response.output_tokens, Ordering::Relaxed);
        Ok(response)
    }

    fn redact(&self, s: &str) -> String {
        match &self.secret {
            Some(k) if !k.is_empty() => s.replace(k.as_str(), "[REDACTED]"),
            _ => s.to_string(),
        }
    }

    fn audit_entry(
        &self,
        req: &ChatRequest,
        outcome: &Result<Reply, ProviderError>,
        attempts: u32,
        latency_ms: u64,
    ) {
        let Some(audit) = &self.audit else { return };
        let entry = json!({
            "timestamp": chrono::Utc::now().to_rfc3339(),
            "kind": req.kind,
            "refs": req.refs,
            "model": req.model,
            "system": req.system.as_deref().map(|s| self.redact(s)),
            "user": self.redact(&req.user),
            "attempts": attempts,
            "latency_ms": latency_ms,
            "response": outcome.as_ref().ok().map(|r| self.redact(&r.text)),
            "error": outcome.as_ref().err().map(|e| self.redact(&e.to_string())),
        });
        let mut f = audit.lock().unwrap();
        if let Err(e) = writeln!(f, "{entry}") {
            log::warn!("audit log write failed: {e}");
        }
    }
}

/// Blocking HTTP transport for the OpenAI and Gemini chat dialects.
pub struct HttpTransport {
    agent: ureq::Agent,
    dialect: Dialect,
    base_url: String,
    key: String,
}

impl HttpTransport {
    pub fn new(config: &ProviderConfig, key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.request_timeout_secs)))
            .build()
            .new_agent();
        HttpTransport {
            agent,
            dialect: config.dialect,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            key,
        }
    }

    pub fn endpoint(&self, model: &str) -> String {
        match self.dialect {
            Dialect::OpenAi => format!("{}/chat/completions", self.base_url),
            _ => format!("{}/models/{}:generateContent", self.base_url, model),
        }
    }
}

/// JSON body for `req` in the given dialect.
pub fn request_body(dialect: Dialect, req: &ChatRequest) -> Value {
    match dialect {
        Dialect::OpenAi => {
            let mut messages = Vec::new();
            if let Some(s) = &req.system {
                messages.push(json!({"role": "system", "content": s}));
            }
            messages.push(json!({"role": "user", "content": req.user}));
            json!({
                "model": req.model,
                "messages": messages,
                "temperature": req.temperature,
                "max_tokens": req.max_output_tokens,
            })
        }
        _ => {
            let mut body = json!({
                "contents": [{"role": "user", "parts": [{"text": req.user}]}],
                "generationConfig": {
                    "temperature": req.temperature,
                    "maxOutputTokens": req.max_output_tokens,
                },
            });
            if let Some(s) = &req.system {
                body["systemInstruction"] = json!({"parts": [{"text": s}]});
            }
            body
        }
    }
}

/// Extracts the reply text and token usage from a response body.
pub fn parse_response(dialect: Dialect, body: &Value) -> Result<Reply, TransportError> {
    let as_u64 = |v: &Value| v.as_u64();
    match dialect {
        Dialect::OpenAi => {
            let text = body["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| {
                    TransportError::fatal("response has no choices[0].message.content")
                })?;
            Ok(Reply {
                text: text.to_string(),
                input_tokens: as_u64(&body["usage"]["prompt_tokens"]),
                output_tokens: as_u64(&body["usage"]["completion_tokens"]),
            })
        }
        _ => {
            let parts = body["candidates"][0]["content"]["parts"]
                .as_array()
                .ok_or_else(|| {
                    let reason = body["candidates"][0]["finishReason"]
                        .as_str()
                        .or_else(|| body["promptFeedback"]["blockReason"].as_str())
                        .unwrap_or("no candidates");
                    TransportError::fatal(format!("response has no content ({reason})"))
                })?;
            let text: String = parts.iter().filter_map(|p| p["text"].as_str()).collect();
            Ok(Reply {
                text,
                input_tokens: as_u64(&body["usageMetadata"]["promptTokenCount"]),
                output_tokens: as_u64(&body["usageMetadata"]["candidatesTokenCount"]),
            })
        }
    }
}

/// Maps an HTTP status to a failure class. `None` means success.
pub fn classify_status(status: u16) -> Option<FailureKind> {
    match status {
        200..=299 => None,
        401 | 403 => Some(FailureKind::Auth),
        408 | 409 | 425 | 429 | 500..=599 => Some(FailureKind::Transient),
        _ => Some(FailureKind::Fatal),
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &ChatRequest) -> Result<Reply, TransportError> {
        let body = request_body(self.dialect, req);
        let url = self.endpoint(&req.model);
        let request = self
            .agent
            .post(&url)
            .header("content-type", "application/json");
        let request = match self.dialect {
            Dialect::OpenAi => request.header("authorization", &format!("Bearer {}", self.key)),
            _ => request.header("x-goog-api-key", &self.key),
        };
        let mut response = request.send_json(&body).map_err(|e| match e {
            ureq::Error::BadUri(_) | ureq::Error::InvalidProxyUrl => {
                TransportError::fatal(e.to_string())
            }
            other => TransportError::transient(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::transient(format!("reading body: {e}")))?;
        if let Some(kind) = classify_status(status) {
            let snippet: String = text.chars().take(300).collect();
            return Err(TransportError {
                kind,
                message: format!("HTTP {status}: {snippet}"),
            });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| TransportError::fatal(format!("response is not JSON: {e}")))?;
        parse_response(self.dialect, &value)
    }
}

/// Replays canned responses keyed by [`StubTransport::fixture_key`].
///
/// Fixtures live in a directory as `{key}.txt`. Tests can also install a
/// responder closure, inject transient failures per key, or make a given call
/// panic to simulate a crash.
#[derive(Default)]
pub struct StubTransport {
    fixtures_dir: Option<PathBuf>,
    fixtures: Mutex<HashMap<String, String>>,
    #[allow(clippy::type_complexity)]
    responder: Option<Box<dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync>>,
    transient_failures: Mutex<HashMap<String, u32>>,
    panic_on_call: Option<usize>,
    delay: Duration,
    calls: AtomicUsize,
    inflight: AtomicUsize,
    high_water: AtomicUsize,
    max_request_tokens: AtomicU64,
}

impl StubTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        StubTransport {
            fixtures_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// Stable key over the prompt kind and the sorted payload references.
    pub fn fixture_key(kind: PromptKind, refs: &[String]) -> String {
        let mut sorted: Vec<&str> = refs.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        let mut material = kind.as_str().to_string();
        for r in sorted {
            material.push('\n');
            material.push_str(r);
        }
        sha256_hex(material.as_bytes())[..16].to_string()
    }

    pub fn insert_fixture(&self, kind: PromptKind, refs: &[String], text: impl Into<String>) {
        self.fixtures
            .lock()
            .unwrap()
            .insert(Self::fixture_key(kind, refs), text.into());
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    /// The next `times` calls for this key fail transiently.
    pub fn fail_transiently(&self, kind: PromptKind, refs: &[String], times: u32) {
        self.transient_failures
            .lock()
            .unwrap()
            .insert(Self::fixture_key(kind, refs), times);
    }

    /// Panics inside call number `n` (1-based).
    pub fn panic_on_call(mut self, n: usize) -> Self {
        self.panic_on_call = Some(n);
        self
    }

    pub fn with_delay(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Most requests ever outstanding at once.
    pub fn high_water(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }

    /// Largest estimated request size seen, in tokens.
    pub fn max_request_tokens(&self) -> u64 {
        self.max_request_tokens.load(Ordering::SeqCst)
    }

    fn lookup(&self, key: &str) -> Option<String> {
        if let Some(t) = self.fixtures.lock().unwrap().get(key) {
            return Some(t.clone());
        }
        let dir = self.fixtures_dir.as_ref()?;
        std::fs::read_to_string(dir.join(format!("{key}.txt"))).ok()
    }
}

struct InflightGuard<'a>(&'a AtomicUsize);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Transport for StubTransport {
    fn send(&self, req: &ChatRequest) -> Result<Reply, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InflightGuard(&self.inflight);
        self.high_water.fetch_max(now, Ordering::SeqCst);
        let size =
            estimate_tokens(req.system.as_deref().unwrap_or("")) + estimate_tokens(&req.user);
        self.max_request_tokens.fetch_max(size, Ordering::SeqCst);
        if self.panic_on_call == Some(n) {
            panic!("stub transport: injected crash on call {n}");
        }
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let key = Self::fixture_key(req.kind, &req.refs);
        {
            let mut failures = self.transient_failures.lock().unwrap();
            if let Some(left) = failures.get_mut(&key) {
                if *left > 0 {
                    *left -= 1;
                    return Err(TransportError::transient(format!(
                        "scripted failure for {key}"
                    )));
                }
            }
        }
        let text = match &self.responder {
            Some(f) => f(req)?,
            None => self
                .lookup(&key)
                .ok_or_else(|| TransportError::fatal(format!("no stub fixture for key {key}")))?,
        };
        Ok(Reply {
            text,
            input_tokens: Some(size),
            output_tokens: None,
        })
    }
}
