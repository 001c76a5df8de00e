//! A complete mild-discomfort consultation against the scripted provider:
//! inquiry rounds, termination, then advice under the safety guard.
//!
//! cargo run --example consult_session

use std::path::Path;
use std::sync::Arc;

use tcm_consult::consult::{ConsultDeps, ConsultEngine, DialogueState, ExtractionMode, UserInput};
use tcm_consult::gateway::{Gateway, ScriptedBackend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/consult_script.json");
    let backend = Arc::new(ScriptedBackend::load(&script)?);
    let mut deps = ConsultDeps::new(Gateway::scripted(backend));
    deps.extraction = ExtractionMode::Rules;
    deps.llm_routing = false;
    let engine = ConsultEngine::new(deps);

    let turns = [
        "I have had trouble sleeping for two weeks.",
        "I feel cold, prefer warm drinks and I am always tired.",
        "My stools are loose and I get dizzy, with some night sweats.",
        "My appetite is poor and I feel bloated.",
        "Thank you, what should I do?",
    ];
    let mut state = DialogueState::new("demo".into(), None);
    for text in turns {
        let out = engine.step(&state, &UserInput { text: text.into(), image: None })?;
        state = out.state;
        println!("> {text}");
        println!("{}\n", out.reply.text);
        println!(
            "  [{:?} | {:?} | {:?} | coverage {} | termination {:?}]\n",
            state.scenario.unwrap(),
            state.stage,
            state.mode,
            state.coverage(),
            state.termination
        );
    }
    Ok(())
}
