//! Rule-based scenario routing over the shipped cue lexicon.
//!
//! cargo run --example route_scenarios

use tcm_consult::scenario::{classify, CueLexicon};

fn main() {
    let lexicon = CueLexicon::defaults();
    let messages = [
        "What is the relationship between yin and yang?",
        "I have been sleeping badly and feel tired.",
        "Can you look at my tongue coating and tell me my constitution?",
        "How should I adjust my diet for the coming winter?",
        "我最近睡不好，容易疲劳。",
        "Hello there",
    ];
    for m in messages {
        let d = classify(m, &[], &lexicon, None);
        println!("{:<20} {:.2}  {m}  {:?}", d.scenario.to_string(), d.confidence, d.rationale);
    }
}
