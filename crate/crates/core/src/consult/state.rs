use serde::{Deserialize, Serialize};

use super::{
    CotStage, EvidenceLedger, ExtractedFinding, Fraction, QuestionId, SafeguardTrigger,
    TerminationReason,
};
use crate::scenario::{RoutingDecision, ScenarioId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum SessionMode {
    Normal,
    /// Entered after the user declines or the inquiry stops gaining ground;
    /// replies are limited to preliminary constitution analysis and general
    /// lifestyle advice.
    ConservativeCompliant,
    Safeguard { trigger: SafeguardTrigger },
}

impl SessionMode {
    pub fn is_safeguard(&self) -> bool {
        matches!(self, SessionMode::Safeguard { .. })
    }

    /// Modes only move away from Normal, never back and never sideways.
    pub fn can_become(&self, next: &SessionMode) -> bool {
        matches!(self, SessionMode::Normal) && !matches!(next, SessionMode::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub speaker: Speaker,
    pub turn: u32,
    pub text: String,
}

/// Everything that can happen to a session. The session state is the fold
/// of its events through [`DialogueState::apply`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    SessionCreated {
        session_id: String,
        scenario_hint: Option<ScenarioId>,
    },
    UserTurn {
        turn: u32,
        text: String,
        /// SHA-256 of an attached image, if any.
        attachment_sha256: Option<String>,
    },
    ScenarioRouted {
        scenario: ScenarioId,
        decision: RoutingDecision,
    },
    ToolInvoked {
        tool: String,
        args: serde_json::Value,
        result: serde_json::Value,
    },
    FindingsExtracted {
        turn: u32,
        findings: Vec<ExtractedFinding>,
    },
    UserDeclined {
        turn: u32,
    },
    BaselineRecorded {
        coverage: Fraction,
    },
    InquiryRoundCompleted {
        round: u32,
        coverage: Fraction,
    },
    QuestionsAsked {
        questions: Vec<QuestionId>,
    },
    TerminationReached {
        reason: TerminationReason,
    },
    ModeChanged {
        mode: SessionMode,
    },
    StageAdvanced {
        stage: CotStage,
    },
    ComplianceChecked {
        violations: Vec<String>,
        regenerations: u32,
        fallback_used: bool,
    },
    ReplyEmitted {
        turn: u32,
        text: String,
    },
    FeedbackLinked {
        feedback_id: String,
        turn: u32,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionCreated { .. } => "SessionCreated",
            EventKind::UserTurn { .. } => "UserTurn",
            EventKind::ScenarioRouted { .. } => "ScenarioRouted",
            EventKind::ToolInvoked { .. } => "ToolInvoked",
            EventKind::FindingsExtracted { .. } => "FindingsExtracted",
            EventKind::UserDeclined { .. } => "UserDeclined",
            EventKind::BaselineRecorded { .. } => "BaselineRecorded",
            EventKind::InquiryRoundCompleted { .. } => "InquiryRoundCompleted",
            EventKind::QuestionsAsked { .. } => "QuestionsAsked",
            EventKind::TerminationReached { .. } => "TerminationReached",
            EventKind::ModeChanged { .. } => "ModeChanged",
            EventKind::StageAdvanced { .. } => "StageAdvanced",
            EventKind::ComplianceChecked { .. } => "ComplianceChecked",
            EventKind::ReplyEmitted { .. } => "ReplyEmitted",
            EventKind::FeedbackLinked { .. } => "FeedbackLinked",
        }
    }
}

/// Per-session consultation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub session_id: String,
    /// `None` until the first turn is routed.
    pub scenario: Option<ScenarioId>,
    pub stage: CotStage,
    pub ledger: EvidenceLedger,
    /// Coverage before the first inquiry round.
    pub baseline_coverage: Option<Fraction>,
    /// One entry per completed inquiry round.
    pub coverage_history: Vec<Fraction>,
    pub inquiry_rounds: u32,
    pub mode: SessionMode,
    pub user_declined: bool,
    pub pending_questions: Vec<QuestionId>,
    pub asked_questions: Vec<QuestionId>,
    pub termination: Option<TerminationReason>,
    pub user_turns: u32,
    pub transcript: Vec<TranscriptTurn>,
    pub feedback_ids: Vec<String>,
}

impl DialogueState {
    pub fn new(session_id: String, scenario: Option<ScenarioId>) -> Self {
        Self {
            session_id,
            scenario,
            stage: CotStage::SymptomRecognition,
            ledger: EvidenceLedger::new(),
            baseline_coverage: None,
            coverage_history: Vec::new(),
            inquiry_rounds: 0,
            mode: SessionMode::Normal,
            user_declined: false,
            pending_questions: Vec::new(),
            asked_questions: Vec::new(),
            termination: None,
            user_turns: 0,
            transcript: Vec::new(),
            feedback_ids: Vec::new(),
        }
    }

    /// Replays `events` onto an empty state.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a EventKind>) -> Result<Self, String> {
        let mut state = Self::new(String::new(), None);
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn coverage(&self) -> Fraction {
        self.ledger.coverage()
    }

    pub fn history_texts(&self) -> Vec<String> {
        self.transcript.iter().map(|t| t.text.clone()).collect()
    }

    /// Applies one event. Events that would break a state invariant (a
    /// mode leaving a non-Normal state, a stage moving backwards, coverage
    /// decreasing) are rejected.
    pub fn apply(&mut self, event: &EventKind) -> Result<(), String> {
        match event {
            EventKind::SessionCreated { session_id, scenario_hint } => {
                *self = Self::new(session_id.clone(), *scenario_hint);
            }
            EventKind::UserTurn { turn, text, .. } => {
                if *turn != self.user_turns + 1 {
                    return Err(format!("user turn {turn} out of sequence after {}", self.user_turns));
                }
                self.user_turns = *turn;
                self.transcript.push(TranscriptTurn {
                    speaker: Speaker::User,
                    turn: *turn,
                    text: text.clone(),
                });
            }
            EventKind::ScenarioRouted { scenario, .. } => self.scenario = Some(*scenario),
            EventKind::ToolInvoked { .. } | EventKind::ComplianceChecked { .. } => {}
            EventKind::FindingsExtracted { turn, findings } => {
                let pairs: Vec<_> = findings.iter().map(|f| (f.element, f.finding.clone())).collect();
                self.ledger.apply(&pairs, *turn);
            }
            EventKind::UserDeclined { .. } => self.user_declined = true,
            EventKind::BaselineRecorded { coverage } => self.baseline_coverage = Some(*coverage),
            EventKind::InquiryRoundCompleted { round, coverage } => {
                if *round != self.inquiry_rounds + 1 {
                    return Err(format!("inquiry round {round} out of sequence"));
                }
                if self.coverage_history.last().is_some_and(|last| coverage < last) {
                    return Err("coverage history would decrease".into());
                }
                self.coverage_history.push(*coverage);
                self.inquiry_rounds = *round;
                self.pending_questions.clear();
            }
            EventKind::QuestionsAsked { questions } => {
                self.pending_questions = questions.clone();
                self.asked_questions.extend(questions.iter().copied());
            }
            EventKind::TerminationReached { reason } => {
                self.termination = Some(*reason);
                self.pending_questions.clear();
            }
            EventKind::ModeChanged { mode } => {
                if !self.mode.can_become(mode) {
                    return Err(format!("illegal mode change {:?} -> {:?}", self.mode, mode));
                }
                self.mode = mode.clone();
            }
            EventKind::StageAdvanced { stage } => {
                if *stage <= self.stage {
                    return Err(format!("stage {stage:?} does not advance from {:?}", self.stage));
                }
                self.stage = *stage;
            }
            EventKind::ReplyEmitted { turn, text } => self.transcript.push(TranscriptTurn {
                speaker: Speaker::Assistant,
                turn: *turn,
                text: text.clone(),
            }),
            EventKind::FeedbackLinked { feedback_id, .. } => self.feedback_ids.push(feedback_id.clone()),
        }
        Ok(())
    }
}
