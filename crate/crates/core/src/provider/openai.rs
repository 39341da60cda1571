//! Blocking client for OpenAI-compatible `/v1/chat/completions` endpoints.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GenerationParams, Provider, ProviderError, ProviderReply, TokenUsage, TrialContext};
use crate::prompt::{MessageSequence, Role};

pub const API_KEY_VAR: &str = "LLM_API_KEY";
pub const BASE_URL_VAR: &str = "LLM_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";

pub struct OpenAiClient {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

impl OpenAiClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        OpenAiClient {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        }
    }

    /// Credentials from `LLM_API_KEY`, endpoint from `LLM_BASE_URL`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::Auth(format!("{API_KEY_VAR} is not set")))?;
        let base = std::env::var(BASE_URL_VAR).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(OpenAiClient::new(base, key))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }
}

fn retry_after(value: Option<&ureq::http::HeaderValue>) -> Option<Duration> {
    value
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn classify(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::StatusCode(code) => ProviderError::Transport(format!("HTTP {code}")),
        other => ProviderError::Transport(other.to_string()),
    }
}

impl Provider for OpenAiClient {
    fn kind(&self) -> &str {
        "live"
    }

    fn send(
        &self,
        messages: &MessageSequence,
        params: &GenerationParams,
        _trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError> {
        let body = ChatRequest {
            model: &params.model_name,
            messages: messages
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: role_name(m.role),
                    content: &m.content,
                })
                .collect(),
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
        };
        let started = Instant::now();
        let mut response = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .config()
            .timeout_global(Some(params.timeout))
            .build()
            .send_json(&body)
            .map_err(classify)?;
        let status = response.status().as_u16();
        let wait = retry_after(response.headers().get("retry-after"));
        let text = response.body_mut().read_to_string().map_err(classify)?;
        let latency = started.elapsed();

        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status}: {text}"))),
            408 => return Err(ProviderError::Timeout),
            429 => return Err(ProviderError::RateLimited { retry_after: wait }),
            500..=599 => return Err(ProviderError::Transport(format!("HTTP {status}: {text}"))),
            _ => return Err(ProviderError::Config { status, body: text }),
        }

        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("response has no choices".into()))?;
        let content = choice
            .message
            .content
            .ok_or_else(|| ProviderError::Malformed("first choice has no content".into()))?;

        let mut meta = BTreeMap::new();
        if let Some(id) = parsed.id {
            meta.insert("id".into(), id);
        }
        if let Some(model) = parsed.model {
            meta.insert("model".into(), model);
        }
        if let Some(reason) = choice.finish_reason {
            meta.insert("finish_reason".into(), reason);
        }
        let token_usage = parsed.usage.and_then(|u| match (u.prompt_tokens, u.completion_tokens) {
            (Some(input), Some(output)) => Some(TokenUsage { input, output }),
            _ => None,
        });
        Ok(ProviderReply {
            content,
            latency,
            token_usage,
            provider_meta: meta,
        })
    }
}
