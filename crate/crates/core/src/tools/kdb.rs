use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{post_json, EndpointConfig, ToolError};
use crate::corpus::RetrievalHit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub modality: Modality,
    /// Text, or an asset reference for non-text entries.
    pub content: String,
    pub score: f64,
    pub source: EntrySource,
    /// Document title for local hits, database label for remote ones.
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeQueryResult {
    /// Sorted by score, highest first.
    pub entries: Vec<KnowledgeEntry>,
}

/// Client for the multimodal knowledge database.
pub struct KdbClient {
    agent: ureq::Agent,
    config: EndpointConfig,
}

fn decode_entry(v: &Value) -> Option<KnowledgeEntry> {
    let modality = match v.get("modality").and_then(Value::as_str).unwrap_or("text") {
        "image" => Modality::Image,
        _ => Modality::Text,
    };
    let content = v
        .get("text")
        .or_else(|| v.get("asset"))
        .or_else(|| v.get("content"))
        .and_then(Value::as_str)?;
    Some(KnowledgeEntry {
        entry_id: v.get("id").or_else(|| v.get("entry_id")).and_then(Value::as_str)?.to_string(),
        modality,
        content: content.to_string(),
        score: v.get("score").and_then(Value::as_f64).filter(|s| s.is_finite())?,
        source: EntrySource::Remote,
        label: v.get("label").and_then(Value::as_str).unwrap_or("").to_string(),
    })
}

impl KdbClient {
    pub fn new(config: EndpointConfig) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().build(),
            config,
        }
    }

    pub fn query(&self, query: &str, modality: Option<Modality>) -> Result<KnowledgeQueryResult, ToolError> {
        if query.trim().is_empty() {
            return Err(ToolError::InvalidArguments {
                tool: "query_knowledge".into(),
                detail: "query is empty".into(),
            });
        }
        let v = post_json(&self.agent, "query_knowledge", &self.config, &json!({"query": query, "modality": modality}))?;
        let mut entries: Vec<KnowledgeEntry> = v
            .get("entries")
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(|e| {
                        let d = decode_entry(e);
                        if d.is_none() {
                            tracing::warn!(entry = %e, "dropping malformed knowledge entry");
                        }
                        d
                    })
                    .collect()
            })
            .unwrap_or_default();
        if let Some(m) = modality {
            entries.retain(|e| e.modality == m);
        }
        entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(KnowledgeQueryResult { entries })
    }
}

/// Merges remote entries with local corpus hits by raw score, highest
/// first; local entries come first on equal scores.
pub fn merge_with_local(remote: KnowledgeQueryResult, local: &[RetrievalHit]) -> KnowledgeQueryResult {
    let mut entries: Vec<KnowledgeEntry> = local
        .iter()
        .map(|h| KnowledgeEntry {
            entry_id: format!("{}@{}", h.doc_id, h.span.0),
            modality: Modality::Text,
            content: h.snippet.clone(),
            score: h.score,
            source: EntrySource::Local,
            label: h.title.clone(),
        })
        .collect();
    entries.extend(remote.entries);
    let rank = |s: EntrySource| match s {
        EntrySource::Local => 0,
        EntrySource::Remote => 1,
    };
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(rank(a.source).cmp(&rank(b.source))));
    KnowledgeQueryResult { entries }
}
