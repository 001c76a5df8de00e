//! Serves the HTTP API on 127.0.0.1:8080 with the scripted provider until
//! Ctrl-C. Try it with `tcm-consult chat` or curl:
//!
//! ```text
//! curl -s -XPOST localhost:8080/v1/sessions
//! curl -s -XPOST localhost:8080/v1/sessions/<id>/messages -H 'content-type: application/json' \
//!      -d '{"text":"I sleep badly and feel tired"}'
//! ```
//!
//! cargo run --example http_service

use std::path::Path;
use std::sync::Arc;

use tcm_consult::consult::ConsultDeps;
use tcm_consult::gateway::{Gateway, ScriptedBackend};
use tcm_consult::service::{http, Service};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/consult_script.json");
    let mut deps = ConsultDeps::new(Gateway::scripted(Arc::new(ScriptedBackend::load(&script)?)));
    deps.llm_routing = false;
    let data = tempfile::tempdir()?;
    let svc = Arc::new(Service::open(data.path(), deps)?);
    http::serve(svc, "127.0.0.1:8080".parse()?).await?;
    Ok(())
}
