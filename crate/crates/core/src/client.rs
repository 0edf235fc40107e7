//! Chat-completions transport with response caching, bounded concurrency,
//! rate limiting, and retry-with-backoff, plus deterministic mock backends
//! for desk-scale runs without any external service.
//!
//! The wire protocol is the standard chat-completions shape: a JSON body
//! `{"model", "messages", "temperature", "max_tokens"?}` POSTed to
//! `{base_url}/chat/completions` with bearer auth taken from the
//! environment variable named in the backend profile. The API key is never
//! written to disk or logs.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{hex, CorpusEntry};
use crate::oracle::{greedy_oracle, ExtractiveSummary};
use crate::prompt::PromptBundle;
use crate::rng::SplitMix64;
use crate::text::{Document, TokenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// A single-turn chat request: one system message then one user message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Build a request from a prompt bundle at temperature 0.
    pub fn from_bundle(model: impl Into<String>, bundle: &PromptBundle) -> Self {
        Self {
            model: model.into(),
            messages: vec![
                ChatMessage {
                    role: Role::System,
                    content: bundle.system.clone(),
                },
                ChatMessage {
                    role: Role::User,
                    content: bundle.user.clone(),
                },
            ],
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.model.is_empty() {
            return Err(ClientError::InvalidRequest {
                message: "empty model name".into(),
            });
        }
        let roles: Vec<Role> = self.messages.iter().map(|m| m.role).collect();
        if roles != [Role::System, Role::User] {
            return Err(ClientError::InvalidRequest {
                message: "messages must be exactly [system, user]".into(),
            });
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ClientError::InvalidRequest {
                message: format!("temperature {} outside [0, 2]", self.temperature),
            });
        }
        Ok(())
    }

    fn user_content(&self) -> &str {
        &self.messages[1].content
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub usage: TokenUsage,
    #[serde(default)]
    pub cached: bool,
}

/// Backend profile. The API key is read from the environment variable
/// named by `api_key_env` at connection time and held only in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout_secs: 60,
            max_retries: 3,
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication rejected (status {status})")]
    Auth { status: u16 },
    #[error("bad request (status {status}): {message}")]
    BadRequest { status: u16, message: String },
    #[error("transient backend failure: {message}")]
    Transient { message: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed transport payload: {message}")]
    Parse { message: String },
    #[error("mock backend has no script entry for digest {digest}")]
    MissingScriptEntry { digest: String },
    #[error("client configuration error: {message}")]
    Config { message: String },
    #[error("invalid request: {message}")]
    InvalidRequest { message: String },
    #[error("cache io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ClientError {
    fn is_transient(&self) -> bool {
        matches!(self, ClientError::Transient { .. })
    }
}

/// Version tag folded into every cache key; bump when the canonical
/// request serialization changes.
const CACHE_KEY_VERSION: &str = "v1";

/// Collision-resistant digest over (model, messages, temperature,
/// max_tokens); stable across processes and platforms.
pub fn cache_key(request: &ChatRequest) -> String {
    let canonical = serde_json::to_string(request).expect("request serializes");
    let mut hasher = Sha256::new();
    hasher.update(CACHE_KEY_VERSION.as_bytes());
    hasher.update(b":");
    hasher.update(canonical.as_bytes());
    hex(&hasher.finalize())
}

/// Wall-clock abstraction so rate limiting is testable with a simulated
/// clock.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

/// Real monotonic clock.
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Simulated clock: `sleep_ms` advances time instantly. Used by the rate
/// limiting and retry tests.
pub struct ManualClock {
    now: Mutex<u64>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self { now: Mutex::new(0) }
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    fn sleep_ms(&self, ms: u64) {
        *self.now.lock().unwrap() += ms;
    }
}

/// A transport that can answer one chat request.
pub trait Backend: Send + Sync {
    fn execute(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError>;
    fn label(&self) -> &str;
}

/// HTTP transport speaking the chat-completions protocol.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    label: String,
}

impl HttpBackend {
    /// Connect using a backend profile; fails fast when the key variable
    /// is unset.
    pub fn from_config(
        config: &BackendConfig,
        label: impl Into<String>,
    ) -> Result<Self, ClientError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| ClientError::Config {
            message: format!("environment variable {} is not set", config.api_key_env),
        })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key,
            label: label.into(),
        })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl Backend for HttpBackend {
    fn execute(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let url = format!("{}/chat/completions", self.base_url);
        let result = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request);
        let mut response = match result {
            Ok(response) => response,
            // Transport-level failures (timeouts, connection errors) are
            // retryable.
            Err(e) => {
                return Err(ClientError::Transient {
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transient {
                message: e.to_string(),
            })?;
        match status {
            200..=299 => parse_wire_body(&body),
            401 | 403 => Err(ClientError::Auth { status }),
            429 => Err(ClientError::Transient {
                message: "rate limited (429)".into(),
            }),
            400..=499 => Err(ClientError::BadRequest {
                status,
                message: snippet(&body),
            }),
            _ => Err(ClientError::Transient {
                message: format!("status {status}: {}", snippet(&body)),
            }),
        }
    }

    fn label(&self) -> &str {
        &self.label
    }
}

fn parse_wire_body(body: &str) -> Result<ChatResponse, ClientError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| ClientError::Parse {
        message: format!("bad response body: {e}"),
    })?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ClientError::Parse {
            message: "response has no choices".into(),
        })?;
    let content = choice.message.content.ok_or_else(|| ClientError::Parse {
        message: "choice has null content".into(),
    })?;
    let usage = wire.usage.unwrap_or_default();
    Ok(ChatResponse {
        content,
        finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".to_string()),
        usage: TokenUsage {
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        },
        cached: false,
    })
}

fn snippet(body: &str) -> String {
    let trimmed = body.trim();
    if trimmed.len() > 200 {
        format!("{}…", &trimmed[..200])
    } else {
        trimmed.to_string()
    }
}

/// Rule-driven behavior for the mock backend.
pub enum MockRule {
    /// Answer extractive prompts with the document's greedy-oracle
    /// sentences, abstractive prompts with the gold summary, revision
    /// prompts by echoing the embedded extractive summary, and evaluator
    /// prompts as the identity judge.
    OracleEcho {
        corpus: Vec<CorpusEntry>,
        m: usize,
        token_config: TokenConfig,
    },
    /// Evaluator prompts only: all fives when prediction equals reference,
    /// all threes otherwise.
    IdentityJudge,
}

/// Deterministic in-process backend: exact digest lookup first, then the
/// configured rule; anything else is a `MissingScriptEntry` error.
pub struct MockBackend {
    entries: Mutex<HashMap<String, String>>,
    rule: Option<MockRule>,
    oracles: HashMap<String, (Document, ExtractiveSummary)>,
    calls: AtomicU64,
    label: String,
}

impl MockBackend {
    pub fn scripted() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            rule: None,
            oracles: HashMap::new(),
            calls: AtomicU64::new(0),
            label: "mock:scripted".to_string(),
        }
    }

    pub fn with_rule(rule: MockRule) -> Result<Self, ClientError> {
        let mut oracles = HashMap::new();
        let label =
            match &rule {
                MockRule::OracleEcho {
                    corpus,
                    m,
                    token_config,
                } => {
                    for entry in corpus {
                        let doc = entry.to_document().map_err(|e| ClientError::Config {
                            message: format!("mock corpus entry {}: {e}", entry.id),
                        })?;
                        let oracle = greedy_oracle(&doc, &entry.summary, *m, token_config)
                            .map_err(|e| ClientError::Config {
                                message: format!("mock oracle for {}: {e}", entry.id),
                            })?;
                        oracles.insert(entry.id.clone(), (doc, oracle));
                    }
                    "mock:oracle-echo"
                }
                MockRule::IdentityJudge => "mock:identity-judge",
            };
        Ok(Self {
            entries: Mutex::new(HashMap::new()),
            rule: Some(rule),
            oracles,
            calls: AtomicU64::new(0),
            label: label.to_string(),
        })
    }

    /// Script an exact response for one request.
    pub fn script(&self, request: &ChatRequest, content: impl Into<String>) {
        self.entries
            .lock()
            .unwrap()
            .insert(cache_key(request), content.into());
    }

    /// Number of requests served (not counting cache hits upstream).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn respond(&self, content: String) -> ChatResponse {
        ChatResponse {
            content,
            finish_reason: "stop".to_string(),
            usage: TokenUsage::default(),
            cached: false,
        }
    }

    fn answer_by_rule(&self, request: &ChatRequest) -> Option<String> {
        let user = request.user_content();
        match self.rule.as_ref()? {
            MockRule::IdentityJudge => identity_judge(user),
            MockRule::OracleEcho { corpus, .. } => {
                if user.starts_with("Please evaluate the summary") {
                    return identity_judge(user);
                }
                if user.starts_with("Please revise the extracted summary") {
                    let extracted = extract_slot(user, " Extractive Summary: ")?;
                    return Some(serde_json::json!({ "summary": extracted }).to_string());
                }
                let entry = best_document_match(corpus, user)?;
                if user.starts_with("Please write a summary for the document.") {
                    return Some(serde_json::json!({ "summary": entry.summary }).to_string());
                }
                // Extractive family (zero-shot, in-context, explanation).
                let (doc, oracle) = self.oracles.get(&entry.id)?;
                let sorted = oracle.sorted_indices();
                let texts: Vec<&str> = sorted
                    .iter()
                    .map(|&i| doc.sentences[i].text.as_str())
                    .collect();
                let mut body = serde_json::json!({ "summary": texts });
                if user.contains("and give the reason") {
                    body["reason"] = serde_json::Value::String(
                        "These sentences carry the salient facts.".into(),
                    );
                }
                Some(body.to_string())
            }
        }
    }
}

/// Parse an evaluator prompt and score it: fives on an exact
/// reference/prediction match, threes otherwise.
fn identity_judge(user: &str) -> Option<String> {
    let after_ref = user.split_once("Reference:")?.1;
    let split_at = after_ref.rfind(" Summary:")?;
    let reference = &after_ref[..split_at];
    let mut prediction = &after_ref[split_at + " Summary:".len()..];
    for fi in [
        crate::prompt::FormatInstruction::evaluator().text,
        crate::prompt::FormatInstruction::abstractive().text,
    ] {
        if let Some(stripped) = prediction.strip_suffix(&fi) {
            prediction = stripped;
            break;
        }
    }
    let score = if reference.trim() == prediction.trim() {
        5
    } else {
        3
    };
    Some(
        serde_json::json!({
            "scores": {
                "coherence": score,
                "consistency": score,
                "fluency": score,
                "efficiency": score
            }
        })
        .to_string(),
    )
}

/// Pull the text of a labeled slot: everything after the last occurrence
/// of `label`, with any known format-instruction suffix stripped.
fn extract_slot(user: &str, label: &str) -> Option<String> {
    let pos = user.rfind(label)?;
    let mut rest = &user[pos + label.len()..];
    for fi in [
        crate::prompt::FormatInstruction::abstractive().text,
        crate::prompt::FormatInstruction::extractive().text,
        crate::prompt::FormatInstruction::extractive_with_reason().text,
        crate::prompt::FormatInstruction::evaluator().text,
    ] {
        if let Some(stripped) = rest.strip_suffix(&fi) {
            rest = stripped.trim_end();
            break;
        }
    }
    Some(rest.trim().to_string())
}

/// Find the corpus entry whose document text occurs in the prompt,
/// preferring the longest match (in-context prompts may embed several
/// documents).
fn best_document_match<'a>(corpus: &'a [CorpusEntry], user: &str) -> Option<&'a CorpusEntry> {
    corpus
        .iter()
        .filter(|e| user.contains(&e.document))
        .max_by_key(|e| e.document.len())
}

impl Backend for MockBackend {
    fn execute(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let digest = cache_key(request);
        if let Some(content) = self.entries.lock().unwrap().get(&digest) {
            return Ok(self.respond(content.clone()));
        }
        match self.answer_by_rule(request) {
            Some(content) => Ok(self.respond(content)),
            None => Err(ClientError::MissingScriptEntry { digest }),
        }
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// Content-addressed response cache: one `{digest}.json` file per request,
/// written atomically (temp file + rename) so concurrent readers never see
/// partial entries.
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: ChatRequest,
    response: ChatResponse,
    timestamp: u64,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ClientError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn load(&self, digest: &str) -> Result<Option<ChatResponse>, ClientError> {
        let path = self.path_for(digest);
        if !path.exists() {
            self.misses.fetch_add(1, Ordering::SeqCst);
            return Ok(None);
        }
        let raw = fs::read_to_string(&path)?;
        let entry: CacheEntry = serde_json::from_str(&raw).map_err(|e| ClientError::Parse {
            message: format!("corrupt cache entry {}: {e}", path.display()),
        })?;
        self.hits.fetch_add(1, Ordering::SeqCst);
        let mut response = entry.response;
        response.cached = true;
        Ok(Some(response))
    }

    pub fn store(
        &self,
        digest: &str,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<(), ClientError> {
        let entry = CacheEntry {
            request: request.clone(),
            response: ChatResponse {
                cached: false,
                ..response.clone()
            },
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let final_path = self.path_for(digest);
        let tmp_path = self.dir.join(format!(".{digest}.tmp"));
        let mut tmp = fs::File::create(&tmp_path)?;
        tmp.write_all(
            serde_json::to_string(&entry)
                .expect("cache entry serializes")
                .as_bytes(),
        )?;
        tmp.sync_all()?;
        drop(tmp);
        fs::rename(&tmp_path, &final_path)?;
        Ok(())
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.path_for(digest).exists()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.permits.lock().unwrap() += 1;
        self.semaphore.available.notify_one();
    }
}

/// Retry timing; the defaults back off 500ms, 1s, 2s, ... plus uniform
/// jitter. Tests set `base_ms` to zero for instant retries.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub base_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

/// The shared client: cache lookup, bounded concurrency, sliding-window
/// rate limiting, and retry with exponential backoff and jitter around any
/// [`Backend`].
pub struct Client {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    clock: Box<dyn Clock>,
    max_retries: u32,
    max_in_flight: usize,
    requests_per_minute: Option<u32>,
    retry: RetryPolicy,
    semaphore: Semaphore,
    dispatch_log: Mutex<VecDeque<u64>>,
    dispatch_history: Mutex<Vec<u64>>,
    jitter: Mutex<SplitMix64>,
}

impl Client {
    pub fn new(backend: Box<dyn Backend>, config: &BackendConfig) -> Self {
        Self::with_clock(backend, config, Box::new(SystemClock::new()))
    }

    pub fn with_clock(
        backend: Box<dyn Backend>,
        config: &BackendConfig,
        clock: Box<dyn Clock>,
    ) -> Self {
        assert!(config.max_in_flight >= 1, "max_in_flight must be positive");
        Self {
            backend,
            cache: None,
            clock,
            max_retries: config.max_retries,
            max_in_flight: config.max_in_flight,
            requests_per_minute: config.requests_per_minute,
            retry: RetryPolicy::default(),
            semaphore: Semaphore::new(config.max_in_flight),
            dispatch_log: Mutex::new(VecDeque::new()),
            dispatch_history: Mutex::new(Vec::new()),
            jitter: Mutex::new(SplitMix64::new(0x6a69_7474_6572)),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn backend_label(&self) -> &str {
        self.backend.label()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Complete one request: cache first, then the backend with retries on
    /// transient failures (timeouts, 429, 5xx). Auth and other 4xx errors
    /// are never retried.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        request.validate()?;
        let digest = cache_key(request);
        if let Some(cache) = &self.cache {
            if let Some(response) = cache.load(&digest)? {
                return Ok(response);
            }
        }

        let _permit = self.semaphore.acquire();
        let mut attempt: u32 = 0;
        loop {
            self.rate_gate();
            self.dispatch_history
                .lock()
                .unwrap()
                .push(self.clock.now_ms());
            match self.backend.execute(request) {
                Ok(response) => {
                    if let Some(cache) = &self.cache {
                        cache.store(&digest, request, &response)?;
                    }
                    return Ok(response);
                }
                Err(error) if error.is_transient() => {
                    if attempt >= self.max_retries {
                        return Err(ClientError::Exhausted {
                            attempts: attempt + 1,
                            last: error.to_string(),
                        });
                    }
                    let backoff = self.backoff_ms(attempt);
                    if backoff > 0 {
                        self.clock.sleep_ms(backoff);
                    }
                    attempt += 1;
                }
                Err(error) => return Err(error),
            }
        }
    }

    fn backoff_ms(&self, attempt: u32) -> u64 {
        let base = self.retry.base_ms.saturating_mul(1u64 << attempt.min(16));
        let base = base.min(self.retry.max_backoff_ms);
        if base == 0 {
            return 0;
        }
        base + self.jitter.lock().unwrap().next_below(base)
    }

    /// Block until dispatching one more request keeps every sliding
    /// 60-second window at or under the configured request budget.
    fn rate_gate(&self) {
        let Some(rpm) = self.requests_per_minute else {
            return;
        };
        loop {
            let wait = {
                let mut log = self.dispatch_log.lock().unwrap();
                let now = self.clock.now_ms();
                while log.front().is_some_and(|&t| t + 60_000 <= now) {
                    log.pop_front();
                }
                if log.len() < rpm as usize {
                    log.push_back(now);
                    return;
                }
                log.front().map(|&t| t + 60_000 - now).unwrap_or(1)
            };
            self.clock.sleep_ms(wait.max(1));
        }
    }

    /// Dispatch timestamps (ms) of every backend attempt; test hook for
    /// the rate-limit invariant.
    pub fn dispatch_times(&self) -> Vec<u64> {
        self.dispatch_history.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Schema;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::from_bundle(
            "test-model",
            &PromptBundle {
                system: "system line".to_string(),
                user: text.to_string(),
                schema: Schema::Extractive,
            },
        )
    }

    fn fast_config() -> BackendConfig {
        BackendConfig {
            max_retries: 3,
            ..BackendConfig::default()
        }
    }

    fn fast_client(backend: Box<dyn Backend>) -> Client {
        Client::with_clock(backend, &fast_config(), Box::new(ManualClock::new())).with_retry_policy(
            RetryPolicy {
                base_ms: 0,
                max_backoff_ms: 0,
            },
        )
    }

    #[test]
    fn cache_key_is_stable_and_sensitive() {
        let a = request("hello");
        assert_eq!(cache_key(&a), cache_key(&a.clone()));
        let mut warmer = a.clone();
        warmer.temperature = 0.7;
        assert_ne!(cache_key(&a), cache_key(&warmer));
        let mut capped = a.clone();
        capped.max_tokens = Some(128);
        assert_ne!(cache_key(&a), cache_key(&capped));
    }

    #[test]
    fn cache_key_golden() {
        // Frozen once from the pinned canonical serialization; a change in
        // this digest means previously cached runs are invalidated.
        let req = ChatRequest {
            model: "gpt-3.5-turbo".to_string(),
            messages: vec![
                ChatMessage {
                    role: Role::System,
                    content: "sys".to_string(),
                },
                ChatMessage {
                    role: Role::User,
                    content: "user".to_string(),
                },
            ],
            temperature: 0.0,
            max_tokens: None,
        };
        assert_eq!(
            cache_key(&req),
            "fd0c287e81b4186637ea40b4448243026605678630cc09b9d18313348d5e4737"
        );
    }

    #[test]
    fn request_validation() {
        let good = request("x");
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.temperature = 3.0;
        assert!(matches!(
            bad.validate(),
            Err(ClientError::InvalidRequest { .. })
        ));
        let mut reversed = good.clone();
        reversed.messages.swap(0, 1);
        assert!(matches!(
            reversed.validate(),
            Err(ClientError::InvalidRequest { .. })
        ));
    }

    /// Backend that plays a scripted sequence of outcomes.
    struct FaultBackend {
        script: Mutex<VecDeque<Result<String, ClientError>>>,
        calls: std::sync::Arc<AtomicU64>,
    }

    impl FaultBackend {
        fn new(script: Vec<Result<String, ClientError>>) -> Self {
            Self {
                script: Mutex::new(script.into()),
                calls: std::sync::Arc::new(AtomicU64::new(0)),
            }
        }

        fn call_counter(&self) -> std::sync::Arc<AtomicU64> {
            self.calls.clone()
        }
    }

    impl Backend for FaultBackend {
        fn execute(&self, _request: &ChatRequest) -> Result<ChatResponse, ClientError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.script.lock().unwrap().pop_front() {
                Some(Ok(content)) => Ok(ChatResponse {
                    content,
                    finish_reason: "stop".into(),
                    usage: TokenUsage::default(),
                    cached: false,
                }),
                Some(Err(e)) => Err(e),
                None => Err(ClientError::Transient {
                    message: "script exhausted".into(),
                }),
            }
        }

        fn label(&self) -> &str {
            "fault"
        }
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let backend = FaultBackend::new(vec![
            Err(ClientError::Transient {
                message: "429".into(),
            }),
            Ok("recovered".into()),
        ]);
        let calls = backend.call_counter();
        let client = fast_client(Box::new(backend));
        let response = client.complete(&request("x")).unwrap();
        assert_eq!(response.content, "recovered");
        // One failure plus one retry.
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let backend = FaultBackend::new(vec![
            Err(ClientError::Auth { status: 401 }),
            Ok("should never be reached".into()),
        ]);
        let calls = backend.call_counter();
        let client = fast_client(Box::new(backend));
        assert!(matches!(
            client.complete(&request("x")),
            Err(ClientError::Auth { status: 401 })
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn exhaustion_reports_attempts() {
        let backend = Box::new(FaultBackend::new(vec![
            Err(ClientError::Transient {
                message: "a".into(),
            }),
            Err(ClientError::Transient {
                message: "b".into(),
            }),
            Err(ClientError::Transient {
                message: "c".into(),
            }),
            Err(ClientError::Transient {
                message: "d".into(),
            }),
        ]));
        let client = fast_client(backend);
        match client.complete(&request("x")) {
            Err(ClientError::Exhausted { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn cache_round_trip_and_hit_flag() {
        let dir = tempfile::tempdir().unwrap();
        let backend = FaultBackend::new(vec![Ok("first".into())]);
        let calls = backend.call_counter();
        let client =
            fast_client(Box::new(backend)).with_cache(ResponseCache::open(dir.path()).unwrap());
        let req = request("cached request");
        let first = client.complete(&req).unwrap();
        assert!(!first.cached);
        let second = client.complete(&req).unwrap();
        assert!(second.cached);
        assert_eq!(first.content, second.content);
        assert_eq!(
            calls.load(Ordering::SeqCst),
            1,
            "second call must not hit the backend"
        );
        assert_eq!(client.cache().unwrap().hits(), 1);
    }

    #[test]
    fn scripted_mock_and_missing_entry() {
        let mock = MockBackend::scripted();
        let known = request("known prompt");
        mock.script(&known, "X");
        let response = mock.execute(&known).unwrap();
        assert_eq!(response.content, "X");
        assert!(!response.cached);
        let unknown = request("unknown prompt");
        assert!(matches!(
            mock.execute(&unknown),
            Err(ClientError::MissingScriptEntry { .. })
        ));
    }

    #[test]
    fn identity_judge_scores_exact_match_five() {
        let fi = crate::prompt::FormatInstruction::evaluator();
        let bundle = crate::prompt::build_evaluator(
            "the same text",
            "the same text",
            &fi,
            &crate::prompt::Templates::default(),
        )
        .unwrap();
        let mock = MockBackend::with_rule(MockRule::IdentityJudge).unwrap();
        let response = mock
            .execute(&ChatRequest::from_bundle("m", &bundle))
            .unwrap();
        let parsed = crate::align::parse_output(&response.content, Schema::Evaluator).unwrap();
        assert!(parsed.scores.unwrap().values().all(|&v| v == 5));

        let bundle = crate::prompt::build_evaluator(
            "reference text",
            "different prediction",
            &fi,
            &crate::prompt::Templates::default(),
        )
        .unwrap();
        let response = mock
            .execute(&ChatRequest::from_bundle("m", &bundle))
            .unwrap();
        let parsed = crate::align::parse_output(&response.content, Schema::Evaluator).unwrap();
        assert!(parsed.scores.unwrap().values().all(|&v| v == 3));
    }

    #[test]
    fn rate_gate_respects_sliding_window() {
        let backend = Box::new(FaultBackend::new(
            (0..25).map(|i| Ok(format!("r{i}"))).collect::<Vec<_>>(),
        ));
        let config = BackendConfig {
            requests_per_minute: Some(10),
            max_retries: 0,
            ..BackendConfig::default()
        };
        let client = Client::with_clock(backend, &config, Box::new(ManualClock::new()))
            .with_retry_policy(RetryPolicy {
                base_ms: 0,
                max_backoff_ms: 0,
            });
        for _ in 0..25 {
            client.complete(&request("x")).unwrap();
        }
        let times = client.dispatch_times();
        assert_eq!(times.len(), 25);
        for (i, &t) in times.iter().enumerate() {
            let in_window = times
                .iter()
                .filter(|&&u| u > t.saturating_sub(60_000) && u <= t)
                .count();
            assert!(
                in_window <= 10,
                "window ending at {t} (index {i}) holds {in_window} requests"
            );
        }
    }
}
