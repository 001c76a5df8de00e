use std::collections::BTreeMap;
use std::sync::Arc;

use jsonschema::JSONSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{merge_with_local, KdbClient, KnowledgeQueryResult, Modality, TongueAnalysis, TongueClient, ToolError};
use crate::corpus::Corpus;
use crate::gateway::{ToolCall, ToolSchema};

pub const TOOL_SCHEMA_FILES: [(&str, &str); 2] = [
    ("classify_tongue", include_str!("../../data/tool_schemas/classify_tongue.json")),
    ("query_knowledge", include_str!("../../data/tool_schemas/query_knowledge.json")),
];

/// Local hits merged into each knowledge query.
const LOCAL_HITS: usize = 3;

/// Tool schema file: name, description, argument and result schemas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub arguments: Value,
    pub result: Value,
}

struct CompiledSpec {
    spec: ToolSpec,
    arguments: JSONSchema,
}

/// Images attached to the current turn, by reference name.
#[derive(Debug, Clone, Default)]
pub struct ToolContext {
    pub attachments: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub tool: String,
    pub ok: bool,
    /// Result object, or `{"error": {"kind", "message"}}`.
    pub payload: Value,
}

impl ToolResult {
    fn ok(call: &ToolCall, payload: Value) -> Self {
        Self { call_id: call.id.clone(), tool: call.name.clone(), ok: true, payload }
    }

    fn err(call: &ToolCall, e: &ToolError) -> Self {
        Self {
            call_id: call.id.clone(),
            tool: call.name.clone(),
            ok: false,
            payload: json!({"error": {"kind": e.kind(), "message": e.to_string()}}),
        }
    }

    pub fn tongue(&self) -> Option<TongueAnalysis> {
        if self.ok && self.tool == "classify_tongue" {
            serde_json::from_value(self.payload.clone()).ok()
        } else {
            None
        }
    }

    pub fn error_kind(&self) -> Option<&str> {
        self.payload.get("error")?.get("kind")?.as_str()
    }
}

/// Registered tools and the clients behind them.
///
/// `classify_tongue` is registered when a tongue client is configured;
/// `query_knowledge` when either a knowledge-database client or a local
/// corpus is available.
#[derive(Default)]
pub struct ToolRegistry {
    specs: BTreeMap<String, Arc<CompiledSpec>>,
    tongue: Option<TongueClient>,
    kdb: Option<KdbClient>,
    corpus: Option<Arc<Corpus>>,
}

fn load_spec(name: &str) -> CompiledSpec {
    let raw = TOOL_SCHEMA_FILES.iter().find(|(n, _)| *n == name).expect("known tool").1;
    let spec: ToolSpec = serde_json::from_str(raw).expect("shipped tool schema parses");
    let arguments = JSONSchema::compile(&spec.arguments).expect("shipped argument schema compiles");
    CompiledSpec { spec, arguments }
}

impl ToolRegistry {
    pub fn new(tongue: Option<TongueClient>, kdb: Option<KdbClient>, corpus: Option<Arc<Corpus>>) -> Self {
        let mut specs = BTreeMap::new();
        if tongue.is_some() {
            specs.insert("classify_tongue".to_string(), Arc::new(load_spec("classify_tongue")));
        }
        if kdb.is_some() || corpus.is_some() {
            specs.insert("query_knowledge".to_string(), Arc::new(load_spec("query_knowledge")));
        }
        Self { specs, tongue, kdb, corpus }
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.specs.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.keys().map(String::as_str).collect()
    }

    pub fn tongue_client(&self) -> Option<&TongueClient> {
        self.tongue.as_ref()
    }

    /// Schemas offered to the model.
    pub fn tool_schemas(&self) -> Vec<ToolSchema> {
        self.specs
            .values()
            .map(|c| ToolSchema {
                name: c.spec.name.clone(),
                description: c.spec.description.clone(),
                parameters: c.spec.arguments.clone(),
            })
            .collect()
    }

    /// Runs a tool call. Only an unregistered name is an error; every other
    /// failure comes back as an error payload.
    pub fn dispatch(&self, call: &ToolCall, ctx: &ToolContext) -> Result<ToolResult, ToolError> {
        let spec = self.specs.get(&call.name).ok_or_else(|| ToolError::UnknownTool(call.name.clone()))?;
        if let Err(errors) = spec.arguments.validate(&call.arguments) {
            let detail = errors.map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
            let e = ToolError::InvalidArguments { tool: call.name.clone(), detail };
            return Ok(ToolResult::err(call, &e));
        }
        let outcome = match call.name.as_str() {
            "classify_tongue" => self.run_tongue(call, ctx),
            "query_knowledge" => self.run_query(call),
            other => Err(ToolError::UnknownTool(other.to_string())),
        };
        Ok(match outcome {
            Ok(v) => ToolResult::ok(call, v),
            Err(e) => ToolResult::err(call, &e),
        })
    }

    fn run_tongue(&self, call: &ToolCall, ctx: &ToolContext) -> Result<Value, ToolError> {
        let client = self.tongue.as_ref().ok_or(ToolError::NotConfigured { tool: call.name.clone() })?;
        let image_ref = call.arguments["image_ref"].as_str().unwrap_or_default();
        let bytes = ctx
            .attachments
            .get(image_ref)
            .ok_or_else(|| ToolError::UnknownAttachment(image_ref.to_string()))?;
        let analysis = client.classify(bytes)?;
        Ok(serde_json::to_value(analysis).expect("analysis serializes"))
    }

    fn run_query(&self, call: &ToolCall) -> Result<Value, ToolError> {
        let query = call.arguments["query"].as_str().unwrap_or_default();
        let modality: Option<Modality> = call
            .arguments
            .get("modality")
            .and_then(|m| serde_json::from_value(m.clone()).ok());
        let remote = match &self.kdb {
            Some(client) => client.query(query, modality)?,
            None => KnowledgeQueryResult::default(),
        };
        let local = match (&self.corpus, modality) {
            (Some(c), None | Some(Modality::Text)) => c.index.retrieve(query, LOCAL_HITS),
            _ => Vec::new(),
        };
        Ok(serde_json::to_value(merge_with_local(remote, &local)).expect("result serializes"))
    }
}
