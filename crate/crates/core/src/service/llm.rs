//! LLM backends consulted on a cache miss.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::{CacheConfig, LlmKind};
use crate::embedder::token_hash::fnv1a64;
use crate::engine::LlmReply;
use crate::error::{Error, Result};
use crate::text::normalize_text;
use crate::turn::{word_count, Role, Turn};

#[derive(Debug)]
pub enum LlmBackend {
    /// Sleeps, then answers `MOCK_RESPONSE(<hash of the normalized query>)`.
    Mock { delay: Duration },
    Remote(RemoteLlm),
}

impl LlmBackend {
    pub fn mock(delay_ms: u64) -> Self {
        LlmBackend::Mock { delay: Duration::from_millis(delay_ms) }
    }

    pub fn from_config(config: &CacheConfig) -> Result<Self> {
        match config.llm_backend {
            LlmKind::Mock => Ok(LlmBackend::mock(config.llm_delay_ms)),
            LlmKind::Remote => {
                let endpoint = config
                    .llm_endpoint
                    .clone()
                    .ok_or_else(|| Error::config("llm_endpoint", "required for the remote backend"))?;
                let api_key = match &config.llm_api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        Error::config("llm_api_key_env", format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                Ok(LlmBackend::Remote(RemoteLlm {
                    endpoint,
                    model: config.llm_model.clone(),
                    api_key,
                    timeout: Duration::from_millis(config.llm_timeout_ms),
                }))
            }
        }
    }

    pub fn invoke(&self, history: &[Turn], query: &str) -> Result<LlmReply> {
        match self {
            LlmBackend::Mock { delay } => {
                thread::sleep(*delay);
                let text = mock_response(query);
                let token_count = word_count(&text);
                Ok(LlmReply { text, token_count })
            }
            LlmBackend::Remote(remote) => remote.invoke(history, query),
        }
    }
}

pub fn mock_response(query: &str) -> String {
    format!("MOCK_RESPONSE({:016x})", fnv1a64(normalize_text(query).as_bytes()))
}

/// Chat-completion style client: `POST {model, messages}` answered by
/// `{choices: [{message: {content}}], usage: {completion_tokens}}`.
#[derive(Debug)]
pub struct RemoteLlm {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    completion_tokens: Option<usize>,
}

impl RemoteLlm {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteLlm { endpoint: endpoint.into(), model: model.into(), api_key: None, timeout: Duration::from_secs(60) }
    }

    pub fn with_timeout_ms(mut self, ms: u64) -> Self {
        self.timeout = Duration::from_millis(ms);
        self
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn invoke(&self, history: &[Turn], query: &str) -> Result<LlmReply> {
        let mut messages: Vec<ChatMessage> = history
            .iter()
            .map(|t| ChatMessage {
                role: match t.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                },
                content: &t.text,
            })
            .collect();
        messages.push(ChatMessage { role: "user", content: query });
        let body = CompletionRequest { model: &self.model, messages };
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Status(code, _) => Error::LlmBackend(format!("status {code}")),
            ureq::Error::Transport(t) => Error::LlmBackend(format!("transport: {t}")),
        })?;
        let parsed: CompletionResponse =
            resp.into_json().map_err(|e| Error::LlmBackend(format!("malformed body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .filter(|t| !normalize_text(t).is_empty())
            .ok_or_else(|| Error::LlmBackend("empty completion".into()))?;
        let token_count = parsed.usage.and_then(|u| u.completion_tokens).unwrap_or_else(|| word_count(&text));
        Ok(LlmReply { text, token_count })
    }
}
