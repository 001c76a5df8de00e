//! Tool registry dispatch with a local corpus standing in for the
//! knowledge database, plus tongue-label mapping of a classifier response.
//!
//! cargo run --example tool_dispatch

use std::path::Path;
use std::sync::Arc;

use serde_json::json;
use tcm_consult::corpus::{ingest_manifest, Corpus};
use tcm_consult::gateway::ToolCall;
use tcm_consult::tools::{LabelMap, ToolContext, ToolRegistry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus/manifest.json");
    let dir = tempfile::tempdir()?;
    ingest_manifest(&manifest, dir.path(), 20)?;
    let registry = ToolRegistry::new(None, None, Some(Arc::new(Corpus::load(dir.path())?)));
    println!("registered: {:?}", registry.names());

    let call = ToolCall { id: "1".into(), name: "query_knowledge".into(), arguments: json!({"query": "tongue coating"}) };
    let result = registry.dispatch(&call, &ToolContext::default())?;
    println!("{}", serde_json::to_string_pretty(&result.payload)?);

    let bad = ToolCall { id: "2".into(), name: "query_knowledge".into(), arguments: json!({"q": 1}) };
    let rejected = registry.dispatch(&bad, &ToolContext::default())?;
    println!("invalid call (ok={}): {}", rejected.ok, rejected.payload["error"]["message"]);

    let native = json!({"color": "淡白", "coating": "白厚", "shape": "胖大", "moisture": "moist"});
    println!("{:?}", LabelMap::defaults().map_response(&native)?);
    Ok(())
}
