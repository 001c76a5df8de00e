//! Consultation orchestration for Traditional Chinese Medicine assistants.
//!
//! A user message is routed to one of four scenarios ([`scenario`]). In the
//! symptom and constitution scenarios an evidence ledger over six
//! diagnostic elements drives bounded inquiry rounds until coverage is
//! sufficient, gains stall or the user declines ([`consult`]). Replies are
//! grounded in a cleaned, category-routed corpus ([`corpus`]) and external
//! tools ([`tools`]), produced through a provider-neutral gateway
//! ([`gateway`]), and repaired until they pass the output rules
//! ([`safety`]).
//!
//! Practitioner feedback drives versioned instructions with regression
//! replay ([`feedback`]), and [`eval`] scores multiple-choice benchmarks
//! exactly. [`service`] persists each session as an append-only event log
//! and exposes everything over HTTP.
//!
//! The whole stack runs offline against
//! [`ScriptedBackend`](gateway::ScriptedBackend):
//!
//! ```no_run
//! use std::sync::Arc;
//! use tcm_consult::consult::{ConsultDeps, ConsultEngine, DialogueState, UserInput};
//! use tcm_consult::gateway::{Gateway, ScriptedBackend};
//!
//! let backend = Arc::new(ScriptedBackend::load("script.json".as_ref()).unwrap());
//! let engine = ConsultEngine::new(ConsultDeps::new(Gateway::scripted(backend)));
//! let state = DialogueState::new("s1".into(), None);
//! let out = engine.step(&state, &UserInput { text: "I sleep badly".into(), image: None }).unwrap();
//! println!("{}", out.reply.text);
//! ```

pub mod config;
pub mod consult;
pub mod corpus;
pub mod eval;
pub mod feedback;
pub mod gateway;
pub mod jsonl;
pub mod safety;
pub mod scenario;
pub mod service;
pub mod text;
pub mod tools;
