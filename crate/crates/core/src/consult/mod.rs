//! Staged consultation reasoning with an evidence-sufficiency ledger.
//!
//! A consultation walks four reasoning stages. During symptom recognition
//! the engine tracks six core diagnostic elements in an [`EvidenceLedger`];
//! while evidence is insufficient it asks a few targeted questions per
//! round, chosen by [`plan_inquiry`]. The loop stops when the user declines,
//! when coverage exceeds the sufficiency threshold, or when two consecutive
//! rounds gain less than the gain threshold ([`check_termination`]).
//! Sensitive contexts (pregnancy, children, chronic illness, acute severe
//! symptoms) switch the session into a safeguard mode.

mod engine;
mod extract;
mod ledger;
mod planner;
mod safeguard;
mod state;
mod termination;

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{compose_questions, ConsultDeps, ConsultEngine, ExtractionMode, ReplyDraft, StepOutcome, UserInput, ATTACHMENT_REF};
pub use extract::{DEFAULT_DECLINE_CUES, DEFAULT_EXTRACTION_CUES, DeclineDetector, ExtractedFinding, FindingSource, RuleExtractor};
pub use ledger::{update_ledger, ElementStatus, EvidenceLedger, Finding};
pub use planner::{
    exact_max_coverage, greedy_plan, plan_inquiry, BilingualText, InquiryQuestion, QuestionId,
    QuestionPool, DEFAULT_QUESTION_POOL, MAX_QUESTIONS_PER_ROUND,
};
pub use safeguard::{detect_safeguard, DEFAULT_SAFEGUARD_CUES, SafeguardDetector, SafeguardKind, SafeguardTrigger};
pub use state::{DialogueState, EventKind, SessionMode, Speaker, TranscriptTurn};
pub use termination::{check_termination, fraction_from_decimal, TerminationReason, Thresholds};

/// Exact rational used for coverage and thresholds.
pub type Fraction = Ratio<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiagnosticElement {
    ColdHeat,
    DeficiencyExcess,
    InteriorExterior,
    Qi,
    Blood,
    Fluids,
}

impl DiagnosticElement {
    pub const ALL: [DiagnosticElement; 6] = [
        DiagnosticElement::ColdHeat,
        DiagnosticElement::DeficiencyExcess,
        DiagnosticElement::InteriorExterior,
        DiagnosticElement::Qi,
        DiagnosticElement::Blood,
        DiagnosticElement::Fluids,
    ];

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticElement::ColdHeat => "ColdHeat",
            DiagnosticElement::DeficiencyExcess => "DeficiencyExcess",
            DiagnosticElement::InteriorExterior => "InteriorExterior",
            DiagnosticElement::Qi => "Qi",
            DiagnosticElement::Blood => "Blood",
            DiagnosticElement::Fluids => "Fluids",
        }
    }
}

impl fmt::Display for DiagnosticElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiagnosticElement {
    type Err = String;

    /// Accepts the canonical names plus snake/kebab/spaced variants
    /// (`cold_heat`, `cold-heat`, `Cold–Heat`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "coldheat" | "寒热" => Ok(DiagnosticElement::ColdHeat),
            "deficiencyexcess" | "虚实" => Ok(DiagnosticElement::DeficiencyExcess),
            "interiorexterior" | "表里" => Ok(DiagnosticElement::InteriorExterior),
            "qi" | "气" => Ok(DiagnosticElement::Qi),
            "blood" | "血" => Ok(DiagnosticElement::Blood),
            "fluids" | "fluid" | "bodyfluids" | "津液" => Ok(DiagnosticElement::Fluids),
            _ => Err(format!("unknown diagnostic element '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CotStage {
    SymptomRecognition,
    PatternDifferentiation,
    TreatmentPrincipleReasoning,
    LifestyleRecommendation,
}

impl CotStage {
    pub fn next(self) -> Option<CotStage> {
        match self {
            CotStage::SymptomRecognition => Some(CotStage::PatternDifferentiation),
            CotStage::PatternDifferentiation => Some(CotStage::TreatmentPrincipleReasoning),
            CotStage::TreatmentPrincipleReasoning => Some(CotStage::LifestyleRecommendation),
            CotStage::LifestyleRecommendation => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConsultError {
    #[error("question pool is empty while elements remain unknown")]
    EmptyPool,
    #[error("gateway unavailable: {0}")]
    GatewayUnavailable(String),
    #[error("session has no routed scenario")]
    ScenarioNotRouted,
    #[error("invalid data file: {0}")]
    Data(String),
    #[error("no scripted reply for request {0}")]
    MissingScript(String),
    #[error("message is empty")]
    EmptyMessage,
    #[error("step would break a state invariant: {0}")]
    Invariant(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_aliases() {
        assert_eq!("cold_heat".parse::<DiagnosticElement>().unwrap(), DiagnosticElement::ColdHeat);
        assert_eq!("Cold–Heat".parse::<DiagnosticElement>().unwrap(), DiagnosticElement::ColdHeat);
        assert_eq!("津液".parse::<DiagnosticElement>().unwrap(), DiagnosticElement::Fluids);
        assert!("Wind".parse::<DiagnosticElement>().is_err());
    }

    #[test]
    fn stages_advance_in_order() {
        let mut s = CotStage::SymptomRecognition;
        let mut seen = vec![s];
        while let Some(n) = s.next() {
            assert!(n > s);
            seen.push(n);
            s = n;
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn bits_are_distinct() {
        let all: u8 = DiagnosticElement::ALL.iter().fold(0, |m, e| m | e.bit());
        assert_eq!(all, 0b11_1111);
    }
}
