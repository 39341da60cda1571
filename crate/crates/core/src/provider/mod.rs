//! Chat-completion backends behind one blocking interface.
//!
//! Every call is independent: a provider never sees more than the single
//! message sequence of the trial it is answering.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::MessageSequence;

pub mod mock;
#[cfg(feature = "live")]
pub mod openai;

pub use mock::{NoiseEntry, NoisePlanBuilder, RecordingProvider, ScriptedBehavior, ScriptedProvider};
#[cfg(feature = "live")]
pub use openai::OpenAiClient;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by backend")]
    RateLimited { retry_after: Option<Duration> },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend rejected the request configuration ({status}): {body}")]
    Config { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("invalid script: {0}")]
    Script(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport(_) | ProviderError::Timeout | ProviderError::RateLimited { .. }
        )
    }

    /// Errors that make the whole cohort pointless (bad credentials, bad model name).
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            ProviderError::Auth(_) | ProviderError::Config { .. } | ProviderError::Script(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid generation parameters: {0}")]
pub struct ParamsError(pub String);

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

mod millis_vec {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &[Duration], s: S) -> Result<S::Ok, S::Error> {
        d.iter()
            .map(|x| x.as_millis() as u64)
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Duration>, D::Error> {
        Vec::<u64>::deserialize(d).map(|v| v.into_iter().map(Duration::from_millis).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    /// Unset means the backend default; sampling parameters are never guessed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    #[serde(rename = "timeout_ms", with = "millis")]
    pub timeout: Duration,
    pub retry_limit: u32,
    #[serde(rename = "retry_backoff_ms", with = "millis_vec")]
    pub retry_backoff: Vec<Duration>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model_name: "gpt-4o-mini".into(),
            temperature: None,
            max_output_tokens: None,
            timeout: Duration::from_secs(60),
            retry_limit: 3,
            retry_backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(2),
                Duration::from_secs(8),
            ],
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(ParamsError(format!("temperature {t} outside [0, 2]")));
            }
        }
        if self.retry_limit > 10 {
            return Err(ParamsError(format!("retry_limit {} exceeds 10", self.retry_limit)));
        }
        if self.max_output_tokens == Some(0) {
            return Err(ParamsError("max_output_tokens must be positive".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(ParamsError("model_name is empty".into()));
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (0-based); the schedule's last entry repeats.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.retry_backoff
            .get(attempt as usize)
            .or(self.retry_backoff.last())
            .copied()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub content: String,
    pub latency: Duration,
    pub token_usage: Option<TokenUsage>,
    pub provider_meta: BTreeMap<String, String>,
}

/// Which trial a request belongs to. Wire clients ignore it; scripted
/// providers key their replies on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrialContext {
    pub item_id: String,
    pub informant_index: u32,
    pub run_index: u32,
}

pub trait Provider: Send + Sync {
    /// Short name recorded in run manifests.
    fn kind(&self) -> &str;

    fn send(
        &self,
        messages: &MessageSequence,
        params: &GenerationParams,
        trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn kind(&self) -> &str {
        (**self).kind()
    }

    fn send(
        &self,
        messages: &MessageSequence,
        params: &GenerationParams,
        trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError> {
        (**self).send(messages, params, trial)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn kind(&self) -> &str {
        (**self).kind()
    }

    fn send(
        &self,
        messages: &MessageSequence,
        params: &GenerationParams,
        trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError> {
        (**self).send(messages, params, trial)
    }
}

/// Outcome of a send with retries, including how many attempts were made.
#[derive(Debug)]
pub struct Attempted {
    pub result: Result<ProviderReply, ProviderError>,
    pub attempts: u32,
    /// Time spent across all attempts, excluding backoff sleeps.
    pub latency: Duration,
}

/// Send once, retrying retryable failures up to `params.retry_limit` times.
pub fn send_with_retry(
    provider: &dyn Provider,
    messages: &MessageSequence,
    params: &GenerationParams,
    trial: &TrialContext,
) -> Attempted {
    let mut attempts = 0;
    let mut latency = Duration::ZERO;
    loop {
        attempts += 1;
        let result = provider.send(messages, params, trial);
        match result {
            Ok(reply) => {
                latency += reply.latency;
                return Attempted {
                    result: Ok(reply),
                    attempts,
                    latency,
                };
            }
            Err(err) if err.is_retryable() && attempts <= params.retry_limit => {
                let mut wait = params.backoff(attempts - 1);
                if let ProviderError::RateLimited {
                    retry_after: Some(after),
                } = err
                {
                    wait = wait.max(after);
                }
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            Err(err) => {
                return Attempted {
                    result: Err(err),
                    attempts,
                    latency,
                }
            }
        }
    }
}

/// Token bucket shared by every informant task of a process.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = requests.max(1) as f64;
        RateLimiter {
            per_minute: capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Block until a request slot is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.per_minute / 60.0;
                state.0 = (state.0 + refill).min(self.per_minute);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) * 60.0 / self.per_minute)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Wraps a provider so every send first takes a slot from a shared limiter.
pub struct RateLimited<P> {
    inner: P,
    limiter: std::sync::Arc<RateLimiter>,
}

impl<P: Provider> RateLimited<P> {
    pub fn new(inner: P, limiter: std::sync::Arc<RateLimiter>) -> Self {
        RateLimited { inner, limiter }
    }
}

impl<P: Provider> Provider for RateLimited<P> {
    fn kind(&self) -> &str {
        self.inner.kind()
    }

    fn send(
        &self,
        messages: &MessageSequence,
        params: &GenerationParams,
        trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError> {
        self.limiter.acquire();
        self.inner.send(messages, params, trial)
    }
}
