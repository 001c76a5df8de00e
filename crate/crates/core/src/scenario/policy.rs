use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ScenarioId;
use crate::corpus::CategoryTag;

pub const DEFAULT_POLICIES: &str = include_str!("../../data/scenario_policies.json");
pub const DEFAULT_INSTRUCTIONS: &str = include_str!("../../data/instructions.json");

/// Content classes a scenario forbids; each maps to a safety violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ForbiddenClass {
    /// Herb dosages and other prescribing instructions.
    PrescriptionGeneration,
    /// Named compound herbal formulas.
    HerbalFormulaGeneration,
    /// Definitive diagnostic conclusions.
    DefinitiveDiagnosis,
}

/// Exact disclaimer text per language variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disclaimer {
    pub en: String,
    pub zh: String,
}

impl Disclaimer {
    pub fn variants(&self) -> [&str; 2] {
        [&self.en, &self.zh]
    }
}

/// Static, configuration-owned part of a scenario policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTemplate {
    pub required_disclaimer: Option<Disclaimer>,
    pub requires_citation: bool,
    pub forbidden_classes: BTreeSet<ForbiddenClass>,
    pub question_budget_per_round: u8,
    pub advisory_on_worsening: bool,
    /// Whether the scenario runs the evidence-gathering inquiry loop or
    /// answers directly.
    pub runs_inquiry: bool,
    /// Knowledge categories consulted first for this scenario.
    #[serde(default)]
    pub knowledge_tags: Vec<CategoryTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPolicy {
    pub scenario: ScenarioId,
    pub instruction_version: String,
    pub instruction_text: String,
    pub required_disclaimer: Option<Disclaimer>,
    pub requires_citation: bool,
    pub forbidden_classes: BTreeSet<ForbiddenClass>,
    pub question_budget_per_round: u8,
    pub advisory_on_worsening: bool,
    pub runs_inquiry: bool,
    pub knowledge_tags: Vec<CategoryTag>,
}

impl ScenarioPolicy {
    pub fn forbids(&self, class: ForbiddenClass) -> bool {
        self.forbidden_classes.contains(&class)
    }
}

/// Supplies the active instruction text for a scenario.
pub trait InstructionSource: Send + Sync {
    /// `(version_id, instruction_text)` of the active version.
    fn active_instruction(&self, scenario: ScenarioId) -> (String, String);
}

/// Fixed instruction texts, used before any version store exists.
#[derive(Debug, Clone)]
pub struct StaticInstructions(pub BTreeMap<ScenarioId, String>);

impl StaticInstructions {
    pub fn defaults() -> Self {
        Self(serde_json::from_str(DEFAULT_INSTRUCTIONS).expect("shipped instructions parse"))
    }
}

impl InstructionSource for StaticInstructions {
    fn active_instruction(&self, scenario: ScenarioId) -> (String, String) {
        (
            "builtin".to_string(),
            self.0.get(&scenario).cloned().unwrap_or_default(),
        )
    }
}

/// Policy templates joined with the live instruction source.
#[derive(Clone)]
pub struct PolicyBook {
    templates: BTreeMap<ScenarioId, PolicyTemplate>,
    instructions: Arc<dyn InstructionSource>,
}

impl std::fmt::Debug for PolicyBook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyBook").field("templates", &self.templates).finish()
    }
}

impl PolicyBook {
    /// Builds a book after checking the policy invariants: the three
    /// consultation scenarios carry a disclaimer, theory learning carries
    /// none but requires citations, and every scenario forbids prescriptions.
    pub fn new(
        templates: BTreeMap<ScenarioId, PolicyTemplate>,
        instructions: Arc<dyn InstructionSource>,
    ) -> Result<Self, String> {
        for s in ScenarioId::ALL {
            let t = templates.get(&s).ok_or_else(|| format!("no policy for {s}"))?;
            match s {
                ScenarioId::TheoryLearning => {
                    if t.required_disclaimer.is_some() || !t.requires_citation {
                        return Err(format!("{s} must require citations and carry no disclaimer"));
                    }
                }
                _ => match &t.required_disclaimer {
                    Some(d) if !d.en.trim().is_empty() && !d.zh.trim().is_empty() => {}
                    _ => return Err(format!("{s} must carry a non-empty disclaimer")),
                },
            }
            if !t.forbidden_classes.contains(&ForbiddenClass::PrescriptionGeneration) {
                return Err(format!("{s} must forbid prescription generation"));
            }
            if !(1..=5).contains(&t.question_budget_per_round) {
                return Err(format!("{s} question budget must be within 1..=5"));
            }
        }
        Ok(Self {
            templates,
            instructions,
        })
    }

    pub fn templates_from_json(json: &str) -> Result<BTreeMap<ScenarioId, PolicyTemplate>, String> {
        serde_json::from_str(json).map_err(|e| e.to_string())
    }

    pub fn defaults() -> Self {
        Self::with_instructions(Arc::new(StaticInstructions::defaults()))
    }

    pub fn with_instructions(instructions: Arc<dyn InstructionSource>) -> Self {
        let templates = Self::templates_from_json(DEFAULT_POLICIES).expect("shipped policies parse");
        Self::new(templates, instructions).expect("shipped policies satisfy invariants")
    }

    /// Same templates, different instruction source.
    pub fn with_source(&self, instructions: Arc<dyn InstructionSource>) -> Self {
        Self {
            templates: self.templates.clone(),
            instructions,
        }
    }

    pub fn instructions(&self) -> Arc<dyn InstructionSource> {
        self.instructions.clone()
    }

    pub fn template(&self, scenario: ScenarioId) -> &PolicyTemplate {
        &self.templates[&scenario]
    }

    /// Overrides the question budget of every scenario (clamped to 1..=5).
    pub fn set_question_budget(&mut self, budget: u8) {
        let b = budget.clamp(1, 5);
        for t in self.templates.values_mut() {
            t.question_budget_per_round = b;
        }
    }

    /// Replaces disclaimer strings for a scenario that carries one.
    pub fn set_disclaimer(&mut self, scenario: ScenarioId, disclaimer: Disclaimer) {
        if let Some(t) = self.templates.get_mut(&scenario) {
            if t.required_disclaimer.is_some() {
                t.required_disclaimer = Some(disclaimer);
            }
        }
    }

    pub fn policy_for(&self, scenario: ScenarioId) -> ScenarioPolicy {
        let (instruction_version, instruction_text) = self.instructions.active_instruction(scenario);
        self.policy_with_instruction(scenario, instruction_version, instruction_text)
    }

    /// Policy for `scenario` with an explicit instruction, used by replay.
    pub fn policy_with_instruction(
        &self,
        scenario: ScenarioId,
        instruction_version: String,
        instruction_text: String,
    ) -> ScenarioPolicy {
        let t = self.template(scenario);
        ScenarioPolicy {
            scenario,
            instruction_version,
            instruction_text,
            required_disclaimer: t.required_disclaimer.clone(),
            requires_citation: t.requires_citation,
            forbidden_classes: t.forbidden_classes.clone(),
            question_budget_per_round: t.question_budget_per_round,
            advisory_on_worsening: t.advisory_on_worsening,
            runs_inquiry: t.runs_inquiry,
            knowledge_tags: t.knowledge_tags.clone(),
        }
    }
}
