//! The scripted provider: exact request fingerprints first, then ordered
//! rules, then a fallback.
//!
//! cargo run --example scripted_gateway

use std::sync::Arc;

use tcm_consult::gateway::{Gateway, PromptBundle, Purpose, RequestMeta, ScriptRule, ScriptedBackend, ScriptedReply};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let backend = Arc::new(ScriptedBackend::new(Default::default()));
    let gateway = Gateway::scripted(backend.clone());

    let bundle = PromptBundle::utility("You are terse.", "Name the five phases.");
    let wire = gateway.encode(&bundle, RequestMeta::new(Purpose::Reply));
    println!("fingerprint {}", wire.fingerprint);
    backend.insert_fingerprint(wire.fingerprint.clone(), ScriptedReply::text("Wood, Fire, Earth, Metal, Water."));
    backend.push_rule(ScriptRule {
        user_contains: Some("yin".into()),
        reply: Some(ScriptedReply::text("Yin and yang are complementary opposites.")),
        ..Default::default()
    });
    backend.set_fallback(Some(ScriptedReply::text("No scripted answer.")));

    for user in ["Name the five phases.", "What is yin?", "Something else"] {
        let resp = gateway.complete(&PromptBundle::utility("You are terse.", user), RequestMeta::new(Purpose::Reply))?;
        println!("{user:<24} -> {}", resp.text);
    }
    println!("{} requests recorded", backend.recorded().len());
    Ok(())
}
