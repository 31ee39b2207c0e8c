//! Providers built from configuration: the mock, a minimal chat-completion
//! HTTP client, and a router that picks one per schema.
//!
//! Wire shape of the HTTP provider (one POST per completion):
//!
//! ```text
//! request:  {"model": "<model>",
//!            "messages": [{"role": "user", "content": "<rendered prompt>"}],
//!            "response_format": {"type": "json_object"}}
//! response: {"choices": [{"message": {"content": "<JSON text>"}}]}
//! ```
//!
//! `Authorization: Bearer <key>` is sent when the configured key variable is
//! set. The content string is handed to the engine's strict schema parser.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use memgraph::llm::{LlmProvider, LlmRequest, ProviderError, Schema};
use memgraph::MockProvider;
use serde::Deserialize;
use serde_json::json;

use crate::config::{EngineConfig, ProviderConfig, ProviderKind};
use crate::error::ApiError;

/// Largest reply body accepted, on top of the request's own output bound.
const ENVELOPE_SLACK: u64 = 64 * 1024;

pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl HttpProvider {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ApiError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| ApiError::validation("http provider needs an endpoint"))?;
        let model = config
            .model
            .clone()
            .ok_or_else(|| ApiError::validation("http provider needs a model"))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let timeout = config.timeout();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model,
            api_key,
            timeout,
        })
    }

    fn transport(&self, e: ureq::Error) -> ProviderError {
        match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout(self.timeout),
            other => ProviderError::Transport(other.to_string()),
        }
    }
}

impl LlmProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "response_format": {"type": "json_object"},
        });
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| self.transport(e))?;
        let status = response.status();
        let limit = request.max_output_size as u64 + ENVELOPE_SLACK;
        let text = response
            .body_mut()
            .with_config()
            .limit(limit)
            .read_to_string()
            .map_err(|e| self.transport(e))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(ProviderError::Transport(format!("status {}: {snippet}", status.as_u16())));
        }
        let completion: Completion = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Transport(format!("malformed completion envelope: {e}")))?;
        completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Transport("completion has no message content".into()))
    }
}

/// Sends each request to the provider configured for its schema.
pub struct SchemaRouter {
    default: Arc<dyn LlmProvider>,
    routes: BTreeMap<Schema, Arc<dyn LlmProvider>>,
}

impl LlmProvider for SchemaRouter {
    fn name(&self) -> &str {
        "router"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        self.routes
            .get(&request.expected_schema)
            .unwrap_or(&self.default)
            .complete(request)
    }
}

fn build_one(config: &ProviderConfig) -> Result<Arc<dyn LlmProvider>, ApiError> {
    Ok(match config.kind {
        ProviderKind::Mock => Arc::new(MockProvider::new()),
        ProviderKind::Http => Arc::new(HttpProvider::from_config(config)?),
    })
}

/// The provider described by `config`, routed per schema when overrides exist.
pub fn build_provider(config: &EngineConfig) -> Result<Arc<dyn LlmProvider>, ApiError> {
    let default = build_one(&config.provider)?;
    if config.providers.is_empty() {
        return Ok(default);
    }
    let routes = config
        .providers
        .iter()
        .map(|(schema, p)| Ok((*schema, build_one(p)?)))
        .collect::<Result<_, ApiError>>()?;
    Ok(Arc::new(SchemaRouter { default, routes }))
}
