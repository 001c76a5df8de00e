//! Checks a non-compliant reply and repairs it.
//!
//! cargo run --example safety_enforce

use tcm_consult::consult::SessionMode;
use tcm_consult::safety::SafetyGuard;
use tcm_consult::scenario::{PolicyBook, ScenarioId};

fn main() {
    let guard = SafetyGuard::default();
    let policy = PolicyBook::defaults().policy_for(ScenarioId::MildDiscomfort);
    let mode = SessionMode::Normal;
    let reply = "You definitely have spleen qi deficiency. Take 15 g of Huang Qi daily and rest more.";

    let report = guard.check(reply, &policy, &mode);
    println!("violations: {:?}", report.kinds());

    // A provider that keeps repeating itself, so redaction has to step in.
    let mut regenerate = |_: &str| Ok(reply.to_string());
    let safe = guard.enforce(reply, &policy, &mode, &report, &[], &mut regenerate);
    println!("fixes: {:?}\n\n{}", safe.applied_fixes, safe.text);
    assert!(guard.check(&safe.text, &policy, &mode).passed);
}
