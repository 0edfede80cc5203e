//! Chat-completion gateway.
//!
//! A [`Gateway`] wraps one backend (an HTTP chat-completion endpoint or a
//! scripted mock) with admission control, retries with exponential backoff
//! and an append-only [`CallLedger`]. Every `complete` call adds exactly one
//! ledger entry, whatever its outcome.

mod ensemble;
mod extract;
mod generate;
mod http;
mod ledger;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Timestamp};
use crate::digest::sha256_fields;

pub use ensemble::{run_ensemble, EnsembleOutcome};
pub use extract::{extract_json_array, extract_json_object};
pub use generate::{complete_note, complete_validated, GenerationError, NoteOutcome};
pub use http::{HttpResponse, HttpTransport, UreqTransport};
pub use ledger::{read_jsonl as read_ledger_jsonl, CallLedger, CallOutcome, LedgerEntry};
pub use mock::{MockFixture, MockScript};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UnreachableReason {
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("no mock fixture for prompt hash {0}")]
    NoFixture(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("server error {0}")]
    Status(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unreachable after {attempts} attempt(s): {reason}")]
    BackendUnreachable { reason: UnreachableReason, attempts: u32 },
    #[error("rate limited; retry after {retry_after:?}")]
    RateLimited { retry_after: Option<Duration> },
    #[error("API key environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("backend rejected the request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Failure of a single attempt, before retry policy is applied.
#[derive(Debug)]
pub(crate) enum AttemptError {
    Transient { reason: UnreachableReason, retry_after: Option<Duration>, rate_limited: bool },
    Fatal(GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimit {
    pub max_in_flight: usize,
    pub min_interval_ms: u64,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self { max_in_flight: 4, min_interval_ms: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_base_ms: 500, backoff_max_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u64.saturating_pow(retry.saturating_sub(1));
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendKind {
    Mock { script: MockScript },
    Http { base_url: String, api_key_env: String },
}

fn default_backend_id() -> String {
    "default".into()
}

fn default_model_id() -> String {
    "mock-model".into()
}

fn default_max_tokens() -> u32 {
    4096
}

fn default_timeout_ms() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(default = "default_backend_id")]
    pub id: String,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub rate_limit: RateLimit,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl BackendConfig {
    pub fn mock(script: MockScript) -> Self {
        Self {
            id: default_backend_id(),
            model_id: default_model_id(),
            kind: BackendKind::Mock { script },
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_ms: default_timeout_ms(),
            rate_limit: RateLimit::default(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn http(base_url: impl Into<String>, api_key_env: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            kind: BackendKind::Http { base_url: base_url.into(), api_key_env: api_key_env.into() },
            ..Self::mock(MockScript::default())
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidConfig(m.into()));
        if self.id.is_empty() {
            return bad("backend id must be non-empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be positive");
        }
        if self.rate_limit.max_in_flight == 0 {
            return bad("rate_limit.max_in_flight must be positive");
        }
        if let BackendKind::Http { base_url, api_key_env } = &self.kind {
            if base_url.trim().is_empty() {
                return bad("http backend requires base_url");
            }
            if api_key_env.trim().is_empty() {
                return bad("http backend requires api_key_env");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_units: u64,
    pub completion_units: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub request_id: String,
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn content_hash(&self) -> String {
        prompt_hash(&self.system_text, &self.user_text)
    }
}

/// Digest identifying a prompt; mock fixtures can be keyed by it.
pub fn prompt_hash(system_text: &str, user_text: &str) -> String {
    sha256_fields([system_text.as_bytes(), user_text.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub latency: Duration,
}

pub(crate) trait Backend: Send + Sync {
    fn send(&self, req: &CompletionRequest) -> Result<Completion, AttemptError>;
}

struct Admission {
    in_flight: Mutex<usize>,
    freed: Condvar,
    last_admitted: Mutex<Option<Timestamp>>,
}

struct AdmissionGuard<'a>(&'a Admission);

impl Drop for AdmissionGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("admission lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    config: BackendConfig,
    backend: Box<dyn Backend>,
    clock: Arc<dyn Clock>,
    ledger: CallLedger,
    admission: Admission,
    sequence: AtomicU64,
    nonce: String,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("id", &self.config.id).field("model_id", &self.config.model_id).finish()
    }
}

impl Gateway {
    pub fn new(config: BackendConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        Self::with_transport(config, clock, Arc::new(UreqTransport))
    }

    /// Like [`Gateway::new`], with a custom HTTP transport for `http` backends.
    pub fn with_transport(
        config: BackendConfig,
        clock: Arc<dyn Clock>,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Box<dyn Backend> = match &config.kind {
            BackendKind::Mock { script } => Box::new(mock::MockBackend::new(script.clone())),
            BackendKind::Http { base_url, api_key_env } => Box::new(http::HttpBackend::new(
                base_url.clone(),
                api_key_env.clone(),
                Duration::from_millis(config.timeout_ms),
                transport,
            )),
        };
        let nonce = clock.now().to_string();
        Ok(Self {
            backend,
            clock,
            ledger: CallLedger::default(),
            admission: Admission { in_flight: Mutex::new(0), freed: Condvar::new(), last_admitted: Mutex::new(None) },
            sequence: AtomicU64::new(0),
            nonce,
            config,
        })
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Builds a request with this backend's model and decoding settings and a
    /// fresh request id.
    pub fn request(&self, system_text: impl Into<String>, user_text: impl Into<String>) -> CompletionRequest {
        let system_text = system_text.into();
        let user_text = user_text.into();
        let seq = self.sequence.fetch_add(1, Ordering::SeqCst);
        let digest = sha256_fields([
            self.config.id.as_bytes(),
            self.nonce.as_bytes(),
            &seq.to_le_bytes(),
            prompt_hash(&system_text, &user_text).as_bytes(),
        ]);
        CompletionRequest {
            request_id: format!("req-{}", &digest[..16]),
            model_id: self.config.model_id.clone(),
            system_text,
            user_text,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    fn admit(&self) -> AdmissionGuard<'_> {
        {
            let mut n = self.admission.in_flight.lock().expect("admission lock");
            while *n >= self.config.rate_limit.max_in_flight {
                n = self.admission.freed.wait(n).expect("admission lock");
            }
            *n += 1;
        }
        let interval = Duration::from_millis(self.config.rate_limit.min_interval_ms);
        let mut last = self.admission.last_admitted.lock().expect("admission lock");
        if let Some(prev) = *last {
            let elapsed = self.clock.now().since(&prev);
            if elapsed < interval {
                self.clock.sleep(interval - elapsed);
            }
        }
        *last = Some(self.clock.now());
        AdmissionGuard(&self.admission)
    }

    /// Sends one request, retrying transient failures per the retry policy.
    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let mut attempts = 0;
        let result = if req.system_text.trim().is_empty() || req.user_text.trim().is_empty() {
            Err(GatewayError::InvalidRequest("system and user text must be non-empty".into()))
        } else {
            let _guard = self.admit();
            self.attempt_loop(req, &mut attempts)
        };
        let outcome = match &result {
            Ok(c) => CallOutcome::Ok { finish_reason: c.finish_reason },
            Err(e) => CallOutcome::Error { message: e.to_string() },
        };
        self.ledger.record(self.clock.as_ref(), |timestamp| LedgerEntry {
            request_id: req.request_id.clone(),
            content_hash: req.content_hash(),
            backend: self.config.id.clone(),
            model_id: req.model_id.clone(),
            timestamp,
            attempts,
            outcome,
        });
        result
    }

    fn attempt_loop(&self, req: &CompletionRequest, attempts: &mut u32) -> Result<Completion, GatewayError> {
        let policy = self.config.retry;
        loop {
            *attempts += 1;
            let started = Instant::now();
            match self.backend.send(req) {
                Ok(mut c) => {
                    if c.latency.is_zero() && !matches!(self.config.kind, BackendKind::Mock { .. }) {
                        c.latency = started.elapsed();
                    }
                    return Ok(c);
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient { reason, retry_after, rate_limited }) => {
                    if *attempts >= policy.max_attempts {
                        return Err(if rate_limited {
                            GatewayError::RateLimited { retry_after }
                        } else {
                            GatewayError::BackendUnreachable { reason, attempts: *attempts }
                        });
                    }
                    let delay = policy.backoff(*attempts).max(retry_after.unwrap_or(Duration::ZERO));
                    self.clock.sleep(delay);
                }
            }
        }
    }
}
