use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    BackendError, ChatBackend, Finish, ProviderConfig, ProviderResponse, Purpose, ToolCall, Usage,
    WireRequest,
};
use crate::consult::CotStage;
use crate::scenario::ScenarioId;

/// OpenAI-compatible HTTP backend.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key_env: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &ProviderConfig) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().build(),
            endpoint: config.endpoint.clone(),
            api_key_env: config.api_key_env.clone(),
        }
    }
}

fn decode_openai(v: &Value) -> Result<ProviderResponse, BackendError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Decode("missing choices[0]".into()))?;
    let message = choice.get("message").cloned().unwrap_or(Value::Null);
    let text = message.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let refused = message.get("refusal").is_some_and(|r| !r.is_null());
    let tool_calls = message
        .get("tool_calls")
        .and_then(Value::as_array)
        .map(|calls| {
            calls
                .iter()
                .map(|c| {
                    let f = c.get("function").cloned().unwrap_or(Value::Null);
                    let raw_args = f.get("arguments").cloned().unwrap_or(Value::Null);
                    let arguments = match &raw_args {
                        Value::String(s) => serde_json::from_str(s).unwrap_or(raw_args.clone()),
                        other => other.clone(),
                    };
                    ToolCall {
                        id: c.get("id").and_then(Value::as_str).unwrap_or("").to_string(),
                        name: f.get("name").and_then(Value::as_str).unwrap_or("").to_string(),
                        arguments,
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        _ if refused => Finish::Refused,
        Some("length") => Finish::Truncated,
        Some("content_filter") => Finish::Refused,
        _ => Finish::Completed,
    };
    let usage = v
        .get("usage")
        .map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        })
        .unwrap_or_default();
    Ok(ProviderResponse { text, tool_calls, finish, usage })
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &WireRequest, timeout: Duration) -> Result<ProviderResponse, BackendError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .timeout(timeout)
            .set("Content-Type", "application/json");
        if let Some(var) = &self.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
        }
        match req.send_bytes(&request.body) {
            Ok(resp) => {
                let body = resp.into_string().map_err(|e| BackendError::Transport(e.to_string()))?;
                let v: Value = serde_json::from_str(&body).map_err(|e| BackendError::Decode(e.to_string()))?;
                decode_openai(&v)
            }
            Err(ureq::Error::Status(status, resp)) => Err(BackendError::Status {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(BackendError::Transport(t.to_string())),
        }
    }
}

/// One canned reply. `fail` simulates a transport error and `status` an
/// HTTP error instead of returning content.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub finish: Finish,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), ..Self::default() }
    }

    pub fn failure(reason: impl Into<String>) -> Self {
        Self { fail: Some(reason.into()), ..Self::default() }
    }

    fn to_result(&self) -> Result<ProviderResponse, BackendError> {
        if let Some(reason) = &self.fail {
            return Err(BackendError::Transport(reason.clone()));
        }
        if let Some(status) = self.status {
            return Err(BackendError::Status { status, body: self.text.clone() });
        }
        Ok(ProviderResponse {
            text: self.text.clone(),
            tool_calls: self.tool_calls.clone(),
            finish: self.finish,
            usage: Usage::default(),
        })
    }
}

/// Matches requests by metadata and content. Every set field must match.
/// With several `replies`, the n-th match gets the n-th reply and the last
/// one repeats.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<CotStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<ScriptedReply>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<ScriptedReply>,
}

impl ScriptRule {
    pub fn purpose(purpose: Purpose, reply: ScriptedReply) -> Self {
        Self { purpose: Some(purpose), reply: Some(reply), ..Self::default() }
    }

    fn matches(&self, req: &WireRequest) -> bool {
        self.purpose.is_none_or(|p| p == req.meta.purpose)
            && self.scenario.is_none_or(|s| Some(s) == req.meta.scenario)
            && self.stage.is_none_or(|s| Some(s) == req.meta.stage)
            && self.user_contains.as_ref().is_none_or(|u| req.user_turn.contains(u.as_str()))
            && self.system_contains.as_ref().is_none_or(|s| req.system_text.contains(s.as_str()))
    }

    fn pick(&self, nth: usize) -> Option<&ScriptedReply> {
        if self.replies.is_empty() {
            self.reply.as_ref()
        } else {
            self.replies.get(nth.min(self.replies.len() - 1))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Script {
    /// Exact request fingerprints, checked first.
    #[serde(default)]
    pub fingerprints: BTreeMap<String, ScriptedReply>,
    /// Checked in order after fingerprints.
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub fallback: Option<ScriptedReply>,
}

struct ScriptState {
    script: Script,
    hits: Vec<usize>,
    recorded: Vec<WireRequest>,
}

/// Deterministic offline provider.
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let hits = vec![0; script.rules.len()];
        Self {
            state: Mutex::new(ScriptState { script, hits, recorded: Vec::new() }),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(json)?))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&raw).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn push_rule(&self, rule: ScriptRule) {
        let mut st = self.state.lock();
        st.script.rules.push(rule);
        st.hits.push(0);
    }

    pub fn insert_fingerprint(&self, fingerprint: impl Into<String>, reply: ScriptedReply) {
        self.state.lock().script.fingerprints.insert(fingerprint.into(), reply);
    }

    pub fn set_fallback(&self, reply: Option<ScriptedReply>) {
        self.state.lock().script.fallback = reply;
    }

    /// Requests received so far, in order.
    pub fn recorded(&self) -> Vec<WireRequest> {
        self.state.lock().recorded.clone()
    }

    pub fn clear_recorded(&self) {
        self.state.lock().recorded.clear();
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, request: &WireRequest, _timeout: Duration) -> Result<ProviderResponse, BackendError> {
        let mut st = self.state.lock();
        st.recorded.push(request.clone());
        if let Some(r) = st.script.fingerprints.get(&request.fingerprint) {
            return r.to_result();
        }
        let hit = st.script.rules.iter().position(|r| r.matches(request));
        if let Some(i) = hit {
            let nth = st.hits[i];
            st.hits[i] += 1;
            if let Some(reply) = st.script.rules[i].pick(nth) {
                return reply.to_result();
            }
        }
        match &st.script.fallback {
            Some(r) => r.to_result(),
            None => Err(BackendError::MissingScript {
                fingerprint: request.fingerprint.clone(),
                purpose: request.meta.purpose,
            }),
        }
    }
}
