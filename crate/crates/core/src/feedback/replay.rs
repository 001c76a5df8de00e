use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FeedbackError, InstructionVersion};
use crate::consult::{ConsultDeps, ConsultEngine, ConsultError, DialogueState, EventKind, UserInput};
use crate::scenario::{InstructionSource, ScenarioId};

/// User side of a recorded session, enough to re-run it.
#[derive(Debug, Clone)]
pub struct RecordedSession {
    pub session_id: String,
    pub scenario_hint: Option<ScenarioId>,
    pub turns: Vec<UserInput>,
}

impl RecordedSession {
    /// Rebuilds the user turns from a session's events. Attached images are
    /// looked up by their SHA-256 through `attachment`; missing ones are
    /// replayed without the image.
    pub fn from_events(events: &[EventKind], attachment: &dyn Fn(&str) -> Option<Vec<u8>>) -> Self {
        let mut session_id = String::new();
        let mut scenario_hint = None;
        let mut turns = Vec::new();
        for e in events {
            match e {
                EventKind::SessionCreated { session_id: id, scenario_hint: hint } => {
                    session_id = id.clone();
                    scenario_hint = *hint;
                }
                EventKind::UserTurn { text, attachment_sha256, .. } => turns.push(UserInput {
                    text: text.clone(),
                    image: attachment_sha256.as_deref().and_then(attachment),
                }),
                _ => {}
            }
        }
        Self { session_id, scenario_hint, turns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDiff {
    pub turn: u32,
    pub old_reply: String,
    pub new_reply: String,
    /// Violations found in the model's unrepaired reply.
    pub old_violations: Vec<String>,
    pub new_violations: Vec<String>,
    /// Old violation count minus new; positive means the new version
    /// produced cleaner drafts.
    pub compliance_delta: i64,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDiff {
    pub transcript_id: String,
    pub turns: Vec<TurnDiff>,
}

/// Instruction source with one scenario pinned to a specific version.
pub struct PinnedInstructions {
    pub base: Arc<dyn InstructionSource>,
    pub pinned: InstructionVersion,
}

impl InstructionSource for PinnedInstructions {
    fn active_instruction(&self, scenario: ScenarioId) -> (String, String) {
        if scenario == self.pinned.scenario {
            (self.pinned.version_id.clone(), self.pinned.instruction_text.clone())
        } else {
            self.base.active_instruction(scenario)
        }
    }
}

struct TurnRun {
    reply: String,
    violations: Vec<String>,
}

fn run(session: &RecordedSession, deps: &ConsultDeps, version: &InstructionVersion) -> Result<Vec<TurnRun>, FeedbackError> {
    let mut deps = deps.clone();
    deps.policies = deps.policies.with_source(Arc::new(PinnedInstructions {
        base: deps.policies.instructions(),
        pinned: version.clone(),
    }));
    let engine = ConsultEngine::new(deps);
    let mut state = DialogueState::new(session.session_id.clone(), session.scenario_hint);
    let mut out = Vec::new();
    for input in &session.turns {
        let step = engine.step(&state, input).map_err(|e| match e {
            ConsultError::MissingScript(fp) => FeedbackError::MissingScript(fp),
            other => FeedbackError::Replay(other.to_string()),
        })?;
        out.push(TurnRun {
            reply: step.reply.text.clone(),
            violations: step.draft_report.kinds().iter().map(|k| format!("{k:?}")).collect(),
        });
        state = step.state;
    }
    Ok(out)
}

/// Re-runs each recorded session under `old` and `new` and reports how the
/// replies differ turn by turn. Both versions must belong to the same
/// scenario. Stores are never touched; `deps` should carry a scripted
/// gateway so the runs are deterministic.
pub fn replay_regression(
    transcripts: &[RecordedSession],
    old: &InstructionVersion,
    new: &InstructionVersion,
    deps: &ConsultDeps,
) -> Result<Vec<ReplayDiff>, FeedbackError> {
    if old.scenario != new.scenario {
        return Err(FeedbackError::Validation(format!(
            "versions belong to different scenarios ({} and {})",
            old.scenario, new.scenario
        )));
    }
    let mut diffs = Vec::with_capacity(transcripts.len());
    for t in transcripts {
        let a = run(t, deps, old)?;
        let b = run(t, deps, new)?;
        let turns = a
            .into_iter()
            .zip(b)
            .enumerate()
            .map(|(i, (a, b))| TurnDiff {
                turn: i as u32 + 1,
                changed: a.reply != b.reply,
                compliance_delta: a.violations.len() as i64 - b.violations.len() as i64,
                old_reply: a.reply,
                new_reply: b.reply,
                old_violations: a.violations,
                new_violations: b.violations,
            })
            .collect();
        diffs.push(ReplayDiff { transcript_id: t.session_id.clone(), turns });
    }
    Ok(diffs)
}
