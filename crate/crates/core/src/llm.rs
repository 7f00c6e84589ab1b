//! Chat-completion client used by the model-backed renderer.
//!
//! Requests go through a response cache, a sliding-window rate limiter, a
//! bound on in-flight requests and a retry loop with exponential backoff.
//! Every completion is appended to an optional JSONL audit log. Mock mode
//! answers locally and never touches the network.

use std::collections::{HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::OperatorKind;
use crate::sketch::{sha256_hex, PromptInput, RendererId};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "CPTSKETCH_API_KEY";
/// Environment variable overriding the endpoint base URL.
pub const BASE_URL_ENV: &str = "CPTSKETCH_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned HTTP {status}")]
    Http { status: u16 },
    #[error("network error: {0}")]
    Network(String),
    #[error("cache or audit log I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub n: u32,
    pub max_retries: u32,
    pub timeout_secs: u64,
    /// 0 disables the limit.
    pub requests_per_minute: u32,
    pub max_in_flight: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            model_id: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            top_p: 1.0,
            n: 1,
            max_retries: 4,
            timeout_secs: 60,
            requests_per_minute: 60,
            max_in_flight: 4,
        }
    }
}

impl ModelParams {
    fn decoding_overridden(&self) -> bool {
        self.temperature != 0.0 || self.top_p != 1.0 || self.n != 1
    }
}

/// How the instruction and input block are packed into chat messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageLayout {
    /// `system: instruction`, `user: input block`.
    #[default]
    SystemUser,
    /// One user message: instruction, blank line, input block.
    SingleUser,
}

/// Content hash over instruction, input block, model and sampling params.
pub fn cache_key(prompt: &PromptInput, params: &ModelParams) -> String {
    let material = format!(
        "{}\u{0}{}\u{0}{}\u{0}{}\u{0}{}",
        prompt.instruction, prompt.input_block, params.model_id, params.temperature, params.top_p
    );
    sha256_hex(material.as_bytes())
}

/// Request body. An empty instruction sends the input block as the only
/// message, whatever the layout.
pub fn build_request(prompt: &PromptInput, params: &ModelParams, layout: MessageLayout) -> Value {
    let messages = match layout {
        _ if prompt.instruction.is_empty() => json!([
            {"role": "user", "content": prompt.input_block},
        ]),
        MessageLayout::SystemUser => json!([
            {"role": "system", "content": prompt.instruction},
            {"role": "user", "content": prompt.input_block},
        ]),
        MessageLayout::SingleUser => json!([
            {"role": "user", "content": format!("{}\n\n{}", prompt.instruction, prompt.input_block)},
        ]),
    };
    json!({
        "model": params.model_id,
        "messages": messages,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "n": params.n,
    })
}

fn first_choice(body: &str) -> Result<String, LlmError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))
}

/// Canned answers for mock mode, keyed by operator. Operators without an
/// entry echo the input block.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CannedResponses(pub HashMap<OperatorKind, String>);

pub fn mock_complete(prompt: &PromptInput, canned: &CannedResponses) -> String {
    canned
        .0
        .get(&prompt.operator)
        .cloned()
        .unwrap_or_else(|| prompt.input_block.clone())
}

// ---------------------------------------------------------------------------
// Time

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock that only moves when slept on.
#[derive(Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// At most `limit` acquisitions in any `window`.
pub struct RateLimiter {
    limit: u32,
    window: Duration,
    stamps: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        Self::new(limit, Duration::from_secs(60))
    }

    pub fn new(limit: u32, window: Duration) -> Self {
        Self {
            limit,
            window,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (through `clock`) until a slot is free, then takes it and
    /// returns the time of acquisition.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        if self.limit == 0 {
            return clock.now();
        }
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().unwrap();
                let now = clock.now();
                while stamps
                    .front()
                    .is_some_and(|&t| now.saturating_sub(t) >= self.window)
                {
                    stamps.pop_front();
                }
                if stamps.len() < self.limit as usize {
                    stamps.push_back(now);
                    return now;
                }
                (stamps[0] + self.window).saturating_sub(now)
            };
            clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

// ---------------------------------------------------------------------------
// Transport

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("HTTP {0}")]
    Status(u16),
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Network(String),
}

/// Sends one request body and returns the raw response body.
pub trait Transport: Send + Sync {
    fn send(&self, request: &Value) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: config.into(),
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str, timeout: Duration) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| LlmError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(base_url, key, timeout))
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &Value) -> Result<String, TransportError> {
        let result = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request);
        match result {
            Ok(mut response) => response
                .body_mut()
                .read_to_string()
                .map_err(|e| TransportError::Network(e.to_string())),
            Err(ureq::Error::StatusCode(code)) => Err(TransportError::Status(code)),
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

// ---------------------------------------------------------------------------
// Cache and audit log

/// Content-addressed response cache: one JSON file per key under `dir`,
/// fronted by an in-memory map.
#[derive(Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    response: String,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            memory: RwLock::default(),
        })
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let prefix = key.get(..2).unwrap_or(key);
        self.dir.as_ref().map(|d| d.join(prefix).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.memory.read().unwrap().get(key) {
            return Some(hit.clone());
        }
        let text = fs::read_to_string(self.path(key)?).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        if entry.key != key {
            return None;
        }
        self.memory
            .write()
            .unwrap()
            .insert(entry.key, entry.response.clone());
        Some(entry.response)
    }

    pub fn put(&self, key: &str, response: &str) -> Result<(), LlmError> {
        self.memory
            .write()
            .unwrap()
            .insert(key.to_string(), response.to_string());
        if let Some(path) = self.path(key) {
            let parent = path.parent().expect("cache path has a parent");
            fs::create_dir_all(parent)?;
            static COUNTER: AtomicUsize = AtomicUsize::new(0);
            let tmp = parent.join(format!(
                ".{key}.{}.{}.tmp",
                std::process::id(),
                COUNTER.fetch_add(1, Ordering::Relaxed)
            ));
            let entry = CacheEntry {
                key: key.to_string(),
                response: response.to_string(),
            };
            fs::write(&tmp, serde_json::to_vec(&entry).expect("entry serializes"))?;
            fs::rename(&tmp, &path)?;
        }
        Ok(())
    }

    /// Loads every response recorded in an audit log.
    pub fn warm_from_audit(&self, audit: &Path) -> Result<usize, LlmError> {
        let mut loaded = 0;
        for line in BufReader::new(File::open(audit)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: AuditRecord = serde_json::from_str(&line)
                .map_err(|e| LlmError::MalformedResponse(format!("audit log: {e}")))?;
            self.put(&record.cache_key, &record.response)?;
            loaded += 1;
        }
        Ok(loaded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub ts: String,
    pub cache_key: String,
    pub request: Value,
    pub response: String,
    pub latency_ms: u64,
}

pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    pub fn append_to(path: &Path) -> Result<Self, LlmError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    fn write(&self, record: &AuditRecord) -> Result<(), LlmError> {
        let mut line = serde_json::to_string(record).expect("audit record serializes");
        line.push('\n');
        self.file.lock().unwrap().write_all(line.as_bytes())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Client

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub cache_key: String,
}

/// Anything that can answer a merge prompt.
pub trait Completer: Sync {
    fn complete(&self, prompt: &PromptInput) -> Result<Completion, LlmError>;
    fn model_params(&self) -> &ModelParams;
    fn layout(&self) -> MessageLayout;
    fn renderer_id(&self) -> RendererId;
}

enum Backend {
    Mock(CannedResponses),
    Remote(Box<dyn Transport>),
}

pub struct LlmClient {
    params: ModelParams,
    layout: MessageLayout,
    backend: Backend,
    cache: ResponseCache,
    audit: Option<AuditLog>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    in_flight: Semaphore,
    backoff_base: Duration,
    network_requests: AtomicUsize,
}

impl LlmClient {
    fn with_backend(params: ModelParams, backend: Backend) -> Self {
        if params.decoding_overridden() {
            log::warn!(
                "decoding parameters overridden: temperature={} top_p={} n={}",
                params.temperature,
                params.top_p,
                params.n
            );
        }
        Self {
            limiter: RateLimiter::per_minute(params.requests_per_minute),
            in_flight: Semaphore::new(params.max_in_flight),
            params,
            layout: MessageLayout::default(),
            backend,
            cache: ResponseCache::in_memory(),
            audit: None,
            clock: Arc::new(SystemClock::default()),
            backoff_base: Duration::from_millis(500),
            network_requests: AtomicUsize::new(0),
        }
    }

    /// Offline client that echoes input blocks.
    pub fn mock(params: ModelParams) -> Self {
        Self::with_backend(params, Backend::Mock(CannedResponses::default()))
    }

    pub fn mock_with(params: ModelParams, canned: CannedResponses) -> Self {
        Self::with_backend(params, Backend::Mock(canned))
    }

    pub fn remote(params: ModelParams, transport: Box<dyn Transport>) -> Self {
        Self::with_backend(params, Backend::Remote(transport))
    }

    pub fn with_layout(mut self, layout: MessageLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Requests actually handed to the transport, retries included.
    pub fn network_requests(&self) -> usize {
        self.network_requests.load(Ordering::SeqCst)
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.backend, Backend::Mock(_))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let delay = self.backoff_base.saturating_mul(1u32 << attempt.min(16));
        delay.min(Duration::from_secs(60))
    }

    fn call_remote(&self, transport: &dyn Transport, request: &Value) -> Result<String, LlmError> {
        let _permit = self.in_flight.acquire();
        let attempts = self.params.max_retries + 1;
        let mut last = TransportError::Network("no attempt made".into());
        for attempt in 0..attempts {
            self.limiter.acquire(self.clock.as_ref());
            self.network_requests.fetch_add(1, Ordering::SeqCst);
            match transport.send(request) {
                Ok(body) => return first_choice(&body),
                Err(TransportError::Status(code @ (401 | 403))) => {
                    return Err(LlmError::Auth(format!("HTTP {code}")))
                }
                Err(e @ (TransportError::Status(429 | 500..=599)
                | TransportError::Timeout
                | TransportError::Network(_))) => {
                    log::warn!("attempt {}/{attempts} failed: {e}", attempt + 1);
                    last = e;
                }
                Err(TransportError::Status(status)) => return Err(LlmError::Http { status }),
            }
            if attempt + 1 < attempts {
                self.clock.sleep(self.backoff(attempt));
            }
        }
        Err(match last {
            TransportError::Status(429) => LlmError::RateLimited { attempts },
            TransportError::Timeout => LlmError::Timeout { attempts },
            TransportError::Status(status) => LlmError::Http { status },
            TransportError::Network(msg) => LlmError::Network(msg),
        })
    }
}

impl Completer for LlmClient {
    fn complete(&self, prompt: &PromptInput) -> Result<Completion, LlmError> {
        let key = cache_key(prompt, &self.params);
        let request = build_request(prompt, &self.params, self.layout);
        let started = self.clock.now();
        let text = match self.cache.get(&key) {
            Some(hit) => hit,
            None => {
                let text = match &self.backend {
                    Backend::Mock(canned) => mock_complete(prompt, canned),
                    Backend::Remote(transport) => self.call_remote(transport.as_ref(), &request)?,
                };
                self.cache.put(&key, &text)?;
                text
            }
        };
        if let Some(audit) = &self.audit {
            audit.write(&AuditRecord {
                ts: chrono::Utc::now().to_rfc3339(),
                cache_key: key.clone(),
                request,
                response: text.clone(),
                latency_ms: self.clock.now().saturating_sub(started).as_millis() as u64,
            })?;
        }
        Ok(Completion {
            text,
            cache_key: key,
        })
    }

    fn model_params(&self) -> &ModelParams {
        &self.params
    }

    fn layout(&self) -> MessageLayout {
        self.layout
    }

    fn renderer_id(&self) -> RendererId {
        if self.is_mock() {
            RendererId::Mock
        } else {
            RendererId::Llm
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::INSTRUCTION;

    fn prompt(block: &str, operator: OperatorKind) -> PromptInput {
        PromptInput {
            instruction: INSTRUCTION.into(),
            input_block: block.into(),
            operator,
        }
    }

    /// Scripted transport: pops one canned result per call.
    struct Scripted {
        replies: Mutex<VecDeque<Result<String, TransportError>>>,
        seen: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<String, TransportError>>) -> Self {
            Self {
                replies: Mutex::new(replies.into()),
                seen: Mutex::default(),
            }
        }
    }

    impl Transport for Scripted {
        fn send(&self, request: &Value) -> Result<String, TransportError> {
            self.seen.lock().unwrap().push(request.clone());
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Ok(ok_body("default")))
        }
    }

    impl Transport for Arc<Scripted> {
        fn send(&self, request: &Value) -> Result<String, TransportError> {
            self.as_ref().send(request)
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn fast(params: ModelParams, transport: Arc<Scripted>) -> (LlmClient, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::default());
        let client = LlmClient::remote(params, Box::new(transport)).with_clock(clock.clone());
        (client, clock)
    }

    #[test]
    fn default_request_carries_deterministic_decoding() {
        let req = build_request(
            &prompt("do in order: 1. x 2. y", OperatorKind::Sequence),
            &ModelParams::default(),
            MessageLayout::SystemUser,
        );
        assert_eq!(req["temperature"], json!(0.0));
        assert_eq!(req["top_p"], json!(1.0));
        assert_eq!(req["n"], json!(1));
        assert_eq!(req["model"], json!("gpt-3.5-turbo"));
        assert_eq!(req["messages"][0]["role"], "system");
        assert_eq!(req["messages"][0]["content"], INSTRUCTION);
        assert_eq!(req["messages"][1]["content"], "do in order: 1. x 2. y");
    }

    #[test]
    fn single_user_layout() {
        let req = build_request(
            &prompt("B", OperatorKind::Loop),
            &ModelParams::default(),
            MessageLayout::SingleUser,
        );
        let messages = req["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 1);
        assert_eq!(messages[0]["content"], format!("{INSTRUCTION}\n\nB"));
    }

    #[test]
    fn cache_key_depends_on_inputs() {
        let p = prompt("B", OperatorKind::Loop);
        let params = ModelParams::default();
        assert_eq!(cache_key(&p, &params), cache_key(&p, &params));
        assert_ne!(cache_key(&p, &params), cache_key(&prompt("C", OperatorKind::Loop), &params));
        let hot = ModelParams {
            temperature: 0.7,
            ..ModelParams::default()
        };
        assert_ne!(cache_key(&p, &params), cache_key(&p, &hot));
    }

    #[test]
    fn second_identical_call_is_cached() {
        let transport = Arc::new(Scripted::new(vec![Ok(ok_body("merged"))]));
        let (client, _) = fast(ModelParams::default(), transport.clone());
        let p = prompt("B", OperatorKind::Sequence);
        assert_eq!(client.complete(&p).unwrap().text, "merged");
        assert_eq!(client.network_requests(), 1);
        assert_eq!(client.complete(&p).unwrap().text, "merged");
        assert_eq!(client.network_requests(), 1);
        assert_eq!(transport.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn retries_transient_failures_with_backoff() {
        let transport = Arc::new(Scripted::new(vec![
            Err(TransportError::Status(503)),
            Err(TransportError::Timeout),
            Ok(ok_body("fine")),
        ]));
        let (client, clock) = fast(ModelParams::default(), transport);
        let out = client.complete(&prompt("B", OperatorKind::Loop)).unwrap();
        assert_eq!(out.text, "fine");
        assert_eq!(client.network_requests(), 3);
        // 500ms + 1000ms of backoff
        assert_eq!(clock.now(), Duration::from_millis(1500));
    }

    #[test]
    fn gives_up_with_rate_limited() {
        let params = ModelParams {
            max_retries: 2,
            ..ModelParams::default()
        };
        let transport = Arc::new(Scripted::new(vec![Err(TransportError::Status(429)); 3]));
        let (client, _) = fast(params, transport);
        let err = client.complete(&prompt("B", OperatorKind::Loop)).unwrap_err();
        assert!(matches!(err, LlmError::RateLimited { attempts: 3 }), "{err}");
    }

    #[test]
    fn non_retryable_errors() {
        let transport = Arc::new(Scripted::new(vec![Err(TransportError::Status(401))]));
        let (client, _) = fast(ModelParams::default(), transport);
        assert!(matches!(
            client.complete(&prompt("B", OperatorKind::Loop)),
            Err(LlmError::Auth(_))
        ));
        assert_eq!(client.network_requests(), 1);

        let transport = Arc::new(Scripted::new(vec![Ok("{\"choices\": []}".into())]));
        let (client, _) = fast(ModelParams::default(), transport);
        assert!(matches!(
            client.complete(&prompt("B", OperatorKind::Loop)),
            Err(LlmError::MalformedResponse(_))
        ));

        let transport = Arc::new(Scripted::new(vec![Err(TransportError::Status(400))]));
        let (client, _) = fast(ModelParams::default(), transport);
        assert!(matches!(
            client.complete(&prompt("B", OperatorKind::Loop)),
            Err(LlmError::Http { status: 400 })
        ));
    }

    #[test]
    fn timeouts_surface_after_retries() {
        let params = ModelParams {
            max_retries: 1,
            ..ModelParams::default()
        };
        let transport = Arc::new(Scripted::new(vec![Err(TransportError::Timeout); 2]));
        let (client, _) = fast(params, transport);
        assert!(matches!(
            client.complete(&prompt("B", OperatorKind::Loop)),
            Err(LlmError::Timeout { attempts: 2 })
        ));
    }

    #[test]
    fn rate_limiter_window() {
        let clock = ManualClock::default();
        let limiter = RateLimiter::per_minute(3);
        let stamps: Vec<Duration> = (0..10).map(|_| limiter.acquire(&clock)).collect();
        for (i, t) in stamps.iter().enumerate() {
            let in_window = stamps
                .iter()
                .filter(|s| **s >= *t && **s < *t + Duration::from_secs(60))
                .count();
            assert!(in_window <= 3, "window starting at request {i} has {in_window}");
        }
        assert_eq!(stamps[3], Duration::from_secs(60));
        assert_eq!(stamps[9], Duration::from_secs(180));
    }

    #[test]
    fn mock_echoes_or_uses_canned() {
        let p = prompt("while c_2 holds, repeatedly: x", OperatorKind::Loop);
        assert_eq!(mock_complete(&p, &CannedResponses::default()), p.input_block);
        let canned = CannedResponses(HashMap::from([(
            OperatorKind::Loop,
            "Keep doing x while c_2 holds.".to_string(),
        )]));
        assert_eq!(mock_complete(&p, &canned), "Keep doing x while c_2 holds.");
        let client = LlmClient::mock_with(ModelParams::default(), canned);
        assert_eq!(client.complete(&p).unwrap().text, "Keep doing x while c_2 holds.");
        assert_eq!(client.network_requests(), 0);
    }

    #[test]
    fn disk_cache_and_audit_replay() {
        let dir = tempfile::tempdir().unwrap();
        let audit_path = dir.path().join("audit.jsonl");
        let transport = Arc::new(Scripted::new(vec![Ok(ok_body("one")), Ok(ok_body("two"))]));
        let (client, _) = fast(ModelParams::default(), transport);
        let client = client
            .with_cache(ResponseCache::on_disk(dir.path().join("cache")).unwrap())
            .with_audit(AuditLog::append_to(&audit_path).unwrap());
        client.complete(&prompt("A", OperatorKind::Sequence)).unwrap();
        client.complete(&prompt("B", OperatorKind::Sequence)).unwrap();
        drop(client);

        let lines = fs::read_to_string(&audit_path).unwrap();
        let records: Vec<AuditRecord> = lines
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].response, "two");
        assert!(!lines.contains("Bearer"));

        let on_disk = ResponseCache::on_disk(dir.path().join("cache")).unwrap();
        assert_eq!(on_disk.get(&records[0].cache_key).as_deref(), Some("one"));

        let warm = ResponseCache::in_memory();
        assert_eq!(warm.warm_from_audit(&audit_path).unwrap(), 2);
        let dead = Arc::new(Scripted::new(vec![Err(TransportError::Network("offline".into()))]));
        let (replay, _) = fast(ModelParams::default(), dead);
        let replay = replay.with_cache(warm);
        assert_eq!(replay.complete(&prompt("B", OperatorKind::Sequence)).unwrap().text, "two");
        assert_eq!(replay.network_requests(), 0);
    }
}
