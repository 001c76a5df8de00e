//! Clients for the external diagnostic services and the registry that
//! dispatches model tool calls to them.

mod kdb;
mod registry;
mod tongue;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use kdb::{merge_with_local, EntrySource, KdbClient, KnowledgeEntry, KnowledgeQueryResult, Modality};
pub use registry::{ToolContext, ToolRegistry, ToolResult, ToolSpec, TOOL_SCHEMA_FILES};
pub use tongue::{
    tongue_findings, validate_image, LabelMap, TongueAnalysis, TongueClient, DEFAULT_TONGUE_LABELS,
};

/// Default image size cap (5 MB).
pub const DEFAULT_MAX_IMAGE_BYTES: usize = 5 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    10_000
}
fn default_retries() -> u32 {
    2
}

impl EndpointConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ToolError {
    #[error("image is {size} bytes, over the {cap}-byte limit")]
    ImageTooLarge { size: usize, cap: usize },
    #[error("image cannot be decoded: {0}")]
    ImageUndecodable(String),
    #[error("{tool} unavailable after {attempts} attempts: {last}")]
    ToolUnavailable { tool: String, attempts: u32, last: String },
    #[error("invalid arguments for {tool}: {detail}")]
    InvalidArguments { tool: String, detail: String },
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
    #[error("no attachment named '{0}' on this turn")]
    UnknownAttachment(String),
    #[error("{tool} is not configured")]
    NotConfigured { tool: String },
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::ImageTooLarge { .. } => "ImageTooLarge",
            ToolError::ImageUndecodable(_) => "ImageUndecodable",
            ToolError::ToolUnavailable { .. } => "ToolUnavailable",
            ToolError::InvalidArguments { .. } => "InvalidArguments",
            ToolError::UnknownTool(_) => "UnknownTool",
            ToolError::UnknownAttachment(_) => "UnknownAttachment",
            ToolError::NotConfigured { .. } => "NotConfigured",
        }
    }
}

/// POSTs JSON with `retries` extra attempts on transport errors and 5xx.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    tool: &str,
    cfg: &EndpointConfig,
    body: &Value,
) -> Result<Value, ToolError> {
    let attempts = cfg.retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        let result = agent
            .post(&cfg.endpoint)
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .send_json(body.clone());
        match result {
            Ok(resp) => {
                return resp.into_json::<Value>().map_err(|e| ToolError::ToolUnavailable {
                    tool: tool.to_string(),
                    attempts: attempt + 1,
                    last: format!("undecodable response: {e}"),
                })
            }
            Err(ureq::Error::Status(code, resp)) if code < 500 && code != 429 => {
                return Err(ToolError::ToolUnavailable {
                    tool: tool.to_string(),
                    attempts: attempt + 1,
                    last: format!("status {code}: {}", resp.into_string().unwrap_or_default()),
                })
            }
            Err(e) => {
                tracing::warn!(tool, attempt = attempt + 1, error = %e, "tool call failed");
                last = e.to_string();
            }
        }
    }
    Err(ToolError::ToolUnavailable { tool: tool.to_string(), attempts, last })
}
