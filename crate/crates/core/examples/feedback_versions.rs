//! Practitioner feedback, a new instruction version linked to it, and a
//! regression replay of a recorded session under both versions.
//!
//! cargo run --example feedback_versions

use std::path::Path;
use std::sync::Arc;

use tcm_consult::consult::{ConsultDeps, ExtractionMode};
use tcm_consult::feedback::{replay_regression, AuthorRole, NewFeedback, NewVersion, Polarity, RecordedSession};
use tcm_consult::gateway::{Gateway, ScriptedBackend};
use tcm_consult::scenario::ScenarioId;
use tcm_consult::service::Service;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/consult_script.json");
    let mut deps = ConsultDeps::new(Gateway::scripted(Arc::new(ScriptedBackend::load(&script)?)));
    deps.extraction = ExtractionMode::Rules;
    deps.llm_routing = false;
    let dir = tempfile::tempdir()?;
    let svc = Service::open(dir.path(), deps)?;

    let id = svc.create_session(None)?.session_id;
    svc.post_message(&id, "What do yin and yang mean?", None)?;
    let fb = svc.record_feedback(NewFeedback {
        session_id: id.clone(),
        turn: 1,
        polarity: Polarity::Critical,
        body: "Name the classic you draw on.".into(),
        author_role: AuthorRole::Practitioner,
    })?;

    let old = svc.version_store().active(ScenarioId::TheoryLearning);
    let new = svc.publish_version(NewVersion {
        scenario: ScenarioId::TheoryLearning,
        instruction_text: format!("{}\nAlways name the classical source.", old.instruction_text),
        changelog: "cite the classic".into(),
        linked_feedback: vec![fb.record_id.clone()],
        parent: Some(old.version_id.clone()),
    })?;
    svc.activate_version(&new.version_id, Some(&old.version_id))?;
    println!("active: {:?}", svc.versions().active);

    let events: Vec<_> = svc.events(&id)?.into_iter().map(|e| e.event).collect();
    let recorded = RecordedSession::from_events(&events, &|sha| svc.attachment(sha));
    for diff in replay_regression(&[recorded], &old, &new, svc.deps())? {
        for t in diff.turns {
            println!("turn {} changed={} compliance delta {}", t.turn, t.changed, t.compliance_delta);
        }
    }
    Ok(())
}
