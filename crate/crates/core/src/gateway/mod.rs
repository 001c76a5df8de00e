//! Provider-neutral LLM access.
//!
//! Prompts are assembled deterministically ([`assemble_prompt`]), encoded
//! as OpenAI-compatible chat-completion JSON ([`WireRequest`]) and sent
//! through a [`ChatBackend`]: [`HttpBackend`] for a live endpoint or
//! [`ScriptedBackend`] for offline, fingerprint-keyed replies.

mod backend;
mod prompt;
mod structured;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consult::CotStage;
use crate::scenario::ScenarioId;

pub use backend::{HttpBackend, Script, ScriptRule, ScriptedBackend, ScriptedReply};
pub use prompt::{
    assemble_prompt, safety_constraints, stage_directive, truncate_context, ChatMessage,
    ContextSnippet, PersonaProfile, PromptBundle, PromptInputs, Role, SystemSection, ToolSchema,
    DEFAULT_CONTEXT_BUDGET, DEFAULT_PERSONA, SECTION_ORDER,
};
pub use structured::{parse_findings, LlmScenarioClassifier, EXTRACTION_INSTRUCTION, FINDING_SCHEMA};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Base delay of the exponential retry backoff.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_temperature() -> f64 {
    0.2
}
fn default_retry_base_ms() -> u64 {
    250
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            api_key_env: None,
            temperature: default_temperature(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    /// Config for the scripted backend; no endpoint is contacted.
    pub fn scripted() -> Self {
        Self {
            retry_base_ms: 0,
            ..Self::new("scripted://local", "scripted")
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout_ms must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::Config("model must be set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Reply,
    Regeneration,
    Extraction,
    ScenarioClassification,
    Evaluation,
}

/// Routing metadata kept alongside the request body; never sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub purpose: Purpose,
    pub scenario: Option<ScenarioId>,
    pub stage: Option<CotStage>,
}

impl RequestMeta {
    pub fn new(purpose: Purpose) -> Self {
        Self { purpose, scenario: None, stage: None }
    }

    pub fn with_scenario(mut self, s: Option<ScenarioId>) -> Self {
        self.scenario = s;
        self
    }

    pub fn with_stage(mut self, s: CotStage) -> Self {
        self.stage = Some(s);
        self
    }
}

/// Encoded request. The body bytes are fixed once built and reused on
/// every retry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRequest {
    pub body: Vec<u8>,
    /// Hex SHA-256 of `body`.
    pub fingerprint: String,
    pub meta: RequestMeta,
    pub user_turn: String,
    pub system_text: String,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: Role,
    content: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tool_call_id: Option<&'a str>,
}

#[derive(Serialize)]
struct WireTool<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    function: &'a ToolSchema,
}

#[derive(Serialize)]
struct WireBody<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    tools: Vec<WireTool<'a>>,
    temperature: f64,
}

impl WireRequest {
    pub fn encode(config: &ProviderConfig, bundle: &PromptBundle, meta: RequestMeta) -> Self {
        let system_text = bundle.system_text();
        let mut messages = vec![WireMessage { role: Role::System, content: &system_text, tool_call_id: None }];
        messages.extend(bundle.history.iter().map(|m| WireMessage {
            role: m.role,
            content: &m.content,
            tool_call_id: m.tool_call_id.as_deref(),
        }));
        if !bundle.user_turn.is_empty() {
            messages.push(WireMessage { role: Role::User, content: &bundle.user_turn, tool_call_id: None });
        }
        let body = WireBody {
            model: &config.model,
            messages,
            tools: bundle.tool_schemas.iter().map(|t| WireTool { kind: "function", function: t }).collect(),
            temperature: config.temperature,
        };
        let body = serde_json::to_vec(&body).expect("wire body serializes");
        let fingerprint = hex(&Sha256::digest(&body));
        Self {
            body,
            fingerprint,
            meta,
            user_turn: bundle.user_turn.clone(),
            system_text,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Finish {
    #[default]
    Completed,
    Truncated,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProviderResponse {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub finish: Finish,
    #[serde(default)]
    pub usage: Usage,
}

impl ProviderResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), ..Self::default() }
    }
}

/// Failure of a single backend round trip.
#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("undecodable provider response: {0}")]
    Decode(String),
    #[error("no scripted reply for {purpose:?} request {fingerprint}")]
    MissingScript { fingerprint: String, purpose: Purpose },
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Decode(_) | BackendError::MissingScript { .. } => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &WireRequest, timeout: Duration) -> Result<ProviderResponse, BackendError>;
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("gateway unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("no scripted reply for {purpose:?} request {fingerprint}")]
    MissingScript { fingerprint: String, purpose: Purpose },
    #[error("structured output could not be parsed: {raw}")]
    MalformedStructuredOutput { raw: String },
    #[error("provider config: {0}")]
    Config(String),
}

/// Shareable handle: backend, config and a call counter.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: ProviderConfig,
    calls: Arc<AtomicU64>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, config: ProviderConfig) -> Self {
        Self {
            backend,
            config,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn http(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend = HttpBackend::new(&config);
        Ok(Self::new(Arc::new(backend), config))
    }

    pub fn scripted(backend: Arc<ScriptedBackend>) -> Self {
        Self::new(backend, ProviderConfig::scripted())
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Backend round trips attempted so far, retries included.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn encode(&self, bundle: &PromptBundle, meta: RequestMeta) -> WireRequest {
        WireRequest::encode(&self.config, bundle, meta)
    }

    /// One chat completion with retries on transport errors, 429 and 5xx.
    pub fn complete(&self, bundle: &PromptBundle, meta: RequestMeta) -> Result<ProviderResponse, GatewayError> {
        self.send(&self.encode(bundle, meta))
    }

    pub fn send(&self, request: &WireRequest) -> Result<ProviderResponse, GatewayError> {
        let attempts = self.config.max_retries + 1;
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 && self.config.retry_base_ms > 0 {
                let factor = 1u64 << (attempt - 1).min(10);
                std::thread::sleep(Duration::from_millis(self.config.retry_base_ms.saturating_mul(factor)));
            }
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.send(request, timeout) {
                Ok(r) => return Ok(r),
                Err(BackendError::MissingScript { fingerprint, purpose }) => {
                    return Err(GatewayError::MissingScript { fingerprint, purpose })
                }
                Err(e) if e.retryable() => {
                    tracing::warn!(attempt = attempt + 1, error = %e, "provider call failed");
                    last = e.to_string();
                }
                Err(e) => return Err(GatewayError::Rejected(e.to_string())),
            }
        }
        Err(GatewayError::Unavailable { attempts, last })
    }

    /// Runs the extraction prompt over `user_turn` and parses the findings.
    pub fn extract_structured(
        &self,
        user_turn: &str,
        scenario: Option<ScenarioId>,
    ) -> Result<Vec<crate::consult::ExtractedFinding>, GatewayError> {
        let bundle = PromptBundle::utility(EXTRACTION_INSTRUCTION, user_turn);
        let resp = self.complete(&bundle, RequestMeta::new(Purpose::Extraction).with_scenario(scenario))?;
        parse_findings(&resp.text)
    }
}
