//! Chat-completion clients.
//!
//! A [`Client`] binds one [`EndpointConfig`] to a [`Transport`] (live HTTP or
//! a scripted mock) and adds retries plus the thinking-trace cap. The
//! [`CachedBackend`] wrapper puts a persistent response cache in front.

pub mod cache;
pub mod http;
pub mod mock;
pub mod recording;
pub mod view;

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub use cache::{cache_key, CacheLookup, CachedBackend, DiskCache};
pub use http::HttpTransport;
pub use mock::{MockRule, MockScript, MockTransport};
pub use recording::{RecordedRequest, RecordingTransport};
pub use view::{
    make_perceiver_view, make_reasoner_view, make_single_view, AgentView, EntryKind, GenerationParams, ViewEntry,
    ViewError, ViewRole,
};

fn default_timeout() -> Duration {
    Duration::from_secs(300)
}

fn default_retries() -> u32 {
    3
}

fn default_sentinel() -> String {
    "</think>".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub supports_vision: bool,
    #[serde(default)]
    pub supports_thinking: bool,
    /// Marker that closes a thinking segment on this endpoint.
    #[serde(default = "default_sentinel")]
    pub thinking_end: String,
    #[serde(default = "default_timeout", with = "duration_secs")]
    pub request_timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl EndpointConfig {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        EndpointConfig {
            name: name.into(),
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key_env: None,
            supports_vision: false,
            supports_thinking: false,
            thinking_end: default_sentinel(),
            request_timeout: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn with_vision(mut self, on: bool) -> Self {
        self.supports_vision = on;
        self
    }

    pub fn with_thinking(mut self, on: bool) -> Self {
        self.supports_thinking = on;
        self
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    LengthCap,
    ThinkingForced,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub thinking_text: Option<String>,
    pub token_count: Option<u32>,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("{endpoint}: transport failure after {attempts} attempt(s): {message}")]
    Transport { endpoint: String, attempts: u32, message: String },
    #[error("{endpoint}: malformed response: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("{endpoint}: credential rejected: {message}")]
    Auth { endpoint: String, message: String },
    #[error("{endpoint}: {message}")]
    Capability { endpoint: String, message: String },
    #[error("{endpoint}: invalid view: {source}")]
    View {
        endpoint: String,
        #[source]
        source: ViewError,
    },
}

impl BackendError {
    pub fn endpoint(&self) -> &str {
        match self {
            BackendError::Transport { endpoint, .. }
            | BackendError::Protocol { endpoint, .. }
            | BackendError::Auth { endpoint, .. }
            | BackendError::Capability { endpoint, .. }
            | BackendError::View { endpoint, .. } => endpoint,
        }
    }
}

/// What a transport is asked to send.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub view: AgentView,
    pub max_tokens: u32,
    /// A closed thinking segment to prefill as the start of the assistant
    /// turn; the model continues with its visible answer.
    pub thinking_prefill: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawReply {
    pub text: String,
    pub thinking: Option<String>,
    pub token_count: Option<u32>,
    pub length_capped: bool,
    /// The endpoint reported a finish reason other than stop or length.
    pub abnormal_finish: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Network errors, timeouts, rate limits and 5xx responses. Retried.
    Transient(String),
    Auth(String),
    Protocol(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, endpoint: &EndpointConfig, request: &CompletionRequest) -> Result<RawReply, TransportFailure>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, endpoint: &EndpointConfig, request: &CompletionRequest) -> Result<RawReply, TransportFailure> {
        (**self).send(endpoint, request)
    }
}

/// Anything that can answer an [`AgentView`].
pub trait ChatBackend: Send + Sync {
    fn endpoint(&self) -> &EndpointConfig;
    fn complete(&self, view: &AgentView) -> Result<CompletionResult, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn endpoint(&self) -> &EndpointConfig {
        (**self).endpoint()
    }

    fn complete(&self, view: &AgentView) -> Result<CompletionResult, BackendError> {
        (**self).complete(view)
    }
}

/// Whitespace token accounting used for thinking caps and by the mock.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Prefix of `text` holding its first `n` whitespace tokens.
pub fn truncate_tokens(text: &str, n: usize) -> &str {
    if n == 0 {
        return "";
    }
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token && seen == n {
                return &text[..i];
            }
            in_token = false;
        } else if !in_token {
            in_token = true;
            seen += 1;
        }
    }
    text
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with up to 50% additive jitter.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        let capped = exp.min(self.max_delay);
        let jitter = rand::thread_rng().gen_range(0.0..=0.5);
        capped + capped.mul_f64(jitter)
    }
}

pub struct Client {
    endpoint: EndpointConfig,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
}

impl Client {
    pub fn new(endpoint: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
        Client { endpoint, transport, retry: RetryPolicy::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn send_with_retries(&self, request: &CompletionRequest) -> Result<RawReply, BackendError> {
        let name = &self.endpoint.name;
        let attempts = self.endpoint.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.transport.send(&self.endpoint, request) {
                Ok(reply) => return Ok(reply),
                Err(TransportFailure::Auth(message)) => {
                    return Err(BackendError::Auth { endpoint: name.clone(), message })
                }
                Err(TransportFailure::Protocol(message)) => {
                    return Err(BackendError::Protocol { endpoint: name.clone(), message })
                }
                Err(TransportFailure::Transient(message)) => {
                    if attempt + 1 < attempts {
                        let delay = self.retry.delay(attempt);
                        warn!(endpoint = %name, attempt = attempt + 1, error = %message, "retrying in {:?}", delay);
                        std::thread::sleep(delay);
                    }
                    last = message;
                }
            }
        }
        Err(BackendError::Transport { endpoint: name.clone(), attempts, message: last })
    }
}

impl ChatBackend for Client {
    fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    /// Sends the view. When the endpoint returns a thinking segment longer
    /// than the cap, the segment is cut at the cap, closed with the endpoint's
    /// sentinel and sent back as a prefill so the model writes its answer.
    fn complete(&self, view: &AgentView) -> Result<CompletionResult, BackendError> {
        let name = &self.endpoint.name;
        view.validate().map_err(|source| BackendError::View { endpoint: name.clone(), source })?;
        if view.role == ViewRole::Perceiver && !self.endpoint.supports_vision {
            return Err(BackendError::Capability {
                endpoint: name.clone(),
                message: "perceiver bound to an endpoint without vision support".into(),
            });
        }
        if view.image_count() > 0 && !self.endpoint.supports_vision {
            return Err(BackendError::Capability {
                endpoint: name.clone(),
                message: "images sent to an endpoint without vision support".into(),
            });
        }

        let cap = view.params.thinking_token_cap as usize;
        let answer_budget = view.params.max_tokens;
        let first_budget = match self.endpoint.supports_thinking {
            true => answer_budget.saturating_add(view.params.thinking_token_cap),
            false => answer_budget,
        };
        let request = CompletionRequest { view: view.clone(), max_tokens: first_budget, thinking_prefill: None };
        let reply = self.send_with_retries(&request)?;

        let overflow = self.endpoint.supports_thinking
            && reply.thinking.as_deref().is_some_and(|t| count_tokens(t) > cap);
        if !overflow {
            let finish_reason = if reply.abnormal_finish {
                FinishReason::Error
            } else if reply.length_capped {
                FinishReason::LengthCap
            } else {
                FinishReason::Stop
            };
            return Ok(CompletionResult {
                text: reply.text,
                thinking_text: reply.thinking.filter(|_| self.endpoint.supports_thinking),
                token_count: reply.token_count,
                finish_reason,
            });
        }

        let thinking = truncate_tokens(reply.thinking.as_deref().unwrap_or_default(), cap).to_string();
        let request = CompletionRequest {
            view: view.clone(),
            max_tokens: answer_budget,
            thinking_prefill: Some(thinking.clone()),
        };
        let cont = self.send_with_retries(&request)?;
        Ok(CompletionResult {
            text: cont.text,
            token_count: cont.token_count.map(|n| n + cap as u32),
            thinking_text: Some(thinking),
            finish_reason: FinishReason::ThinkingForced,
        })
    }
}
