//! Scenario routing and per-scenario instruction policies.
//!
//! Every user turn is classified into one of four consultation scenarios by
//! a rule pass over bilingual cue lexicons. Ambiguous or unmatched turns are
//! referred to an optional [`ScenarioFallback`] (normally an LLM call through
//! the gateway) and, failing that, resolved by a fixed safety-first priority.

mod lexicon;
mod policy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub(crate) use lexicon::compile_cue;
pub use lexicon::{CueLexicon, LexiconError, DEFAULT_SCENARIO_CUES};
pub use policy::{
    Disclaimer, ForbiddenClass, InstructionSource, PolicyBook, PolicyTemplate, ScenarioPolicy,
    StaticInstructions, DEFAULT_INSTRUCTIONS, DEFAULT_POLICIES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    TheoryLearning,
    MildDiscomfort,
    ConstitutionTongue,
    SeasonalWellness,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [
        ScenarioId::TheoryLearning,
        ScenarioId::MildDiscomfort,
        ScenarioId::ConstitutionTongue,
        ScenarioId::SeasonalWellness,
    ];

    /// Resolution order when cues are ambiguous: symptom handling carries the
    /// strictest guardrails, so it wins.
    pub const PRIORITY: [ScenarioId; 4] = [
        ScenarioId::MildDiscomfort,
        ScenarioId::ConstitutionTongue,
        ScenarioId::SeasonalWellness,
        ScenarioId::TheoryLearning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::TheoryLearning => "TheoryLearning",
            ScenarioId::MildDiscomfort => "MildDiscomfort",
            ScenarioId::ConstitutionTongue => "ConstitutionTongue",
            ScenarioId::SeasonalWellness => "SeasonalWellness",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "theorylearning" | "theory" | "learning" => Ok(ScenarioId::TheoryLearning),
            "milddiscomfort" | "discomfort" | "symptoms" => Ok(ScenarioId::MildDiscomfort),
            "constitutiontongue" | "constitution" | "tongue" => Ok(ScenarioId::ConstitutionTongue),
            "seasonalwellness" | "seasonal" | "wellness" => Ok(ScenarioId::SeasonalWellness),
            _ => Err(format!("unknown scenario '{s}'")),
        }
    }
}

/// Outcome of classifying one user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub scenario: ScenarioId,
    /// In `[0, 1]`; exactly 1.0 when one lexicon alone matched.
    pub confidence: f64,
    /// Matched cue identifiers, plus `llm` or `priority-fallback` markers.
    pub rationale: Vec<String>,
}

/// Second-opinion classifier consulted when the rule pass is inconclusive.
pub trait ScenarioFallback {
    fn classify(
        &self,
        message: &str,
        history: &[String],
        candidates: &[ScenarioId],
    ) -> Result<(ScenarioId, f64), String>;
}

/// Classifies `message`.
///
/// Exactly one matching lexicon decides with confidence 1.0. Otherwise the
/// fallback is asked; if it is absent or fails, the highest-priority
/// candidate wins with confidence `1 / candidates`.
pub fn classify(
    message: &str,
    history: &[String],
    lexicon: &CueLexicon,
    fallback: Option<&dyn ScenarioFallback>,
) -> RoutingDecision {
    let matched = lexicon.matches(message);
    let mut rationale: Vec<String> = matched
        .iter()
        .flat_map(|(s, cues)| cues.iter().map(move |c| format!("{s}:{c}")))
        .collect();

    if matched.len() == 1 {
        let (&scenario, _) = matched.iter().next().unwrap();
        return RoutingDecision {
            scenario,
            confidence: 1.0,
            rationale,
        };
    }

    let candidates: Vec<ScenarioId> = if matched.is_empty() {
        ScenarioId::ALL.to_vec()
    } else {
        matched.keys().copied().collect()
    };

    if let Some(fb) = fallback {
        match fb.classify(message, history, &candidates) {
            Ok((scenario, confidence)) => {
                rationale.push(format!("llm:{scenario}"));
                return RoutingDecision {
                    scenario,
                    confidence: if confidence.is_finite() { confidence.clamp(0.0, 1.0) } else { 0.0 },
                    rationale,
                };
            }
            Err(e) => tracing::warn!(error = %e, "scenario fallback failed; using priority order"),
        }
    }

    let scenario = ScenarioId::PRIORITY
        .into_iter()
        .find(|s| candidates.contains(s))
        .expect("candidates are non-empty");
    rationale.push("priority-fallback".to_string());
    RoutingDecision {
        scenario,
        confidence: 1.0 / candidates.len() as f64,
        rationale,
    }
}

/// Sticky scenario selection: a session switches scenario only when a new
/// decision names a different scenario with at least `switch_threshold`
/// confidence.
pub fn resolve_scenario(
    current: Option<ScenarioId>,
    decision: &RoutingDecision,
    switch_threshold: f64,
) -> ScenarioId {
    match current {
        None => decision.scenario,
        Some(cur) if cur != decision.scenario && decision.confidence >= switch_threshold => {
            decision.scenario
        }
        Some(cur) => cur,
    }
}

pub const DEFAULT_SWITCH_THRESHOLD: f64 = 0.7;
