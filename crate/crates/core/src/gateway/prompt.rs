use serde::{Deserialize, Serialize};

use crate::consult::{CotStage, SessionMode};
use crate::corpus::RetrievalHit;
use crate::scenario::{ForbiddenClass, ScenarioPolicy};

pub const DEFAULT_PERSONA: &str = include_str!("../../data/persona.json");

/// Default character budget for retrieved context.
pub const DEFAULT_CONTEXT_BUDGET: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub version: String,
    pub text: String,
}

impl PersonaProfile {
    pub fn defaults() -> Self {
        serde_json::from_str(DEFAULT_PERSONA).expect("shipped persona parses")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, content: text.into(), tool_call_id: None }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: text.into(), tool_call_id: None }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self { role: Role::Tool, content: content.into(), tool_call_id: Some(call_id.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemSection {
    pub name: String,
    pub text: String,
}

/// Retrieved passage with the title of the document it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnippet {
    pub source: String,
    pub text: String,
    pub score: f64,
}

impl From<&RetrievalHit> for ContextSnippet {
    fn from(h: &RetrievalHit) -> Self {
        Self {
            source: h.title.clone(),
            text: h.snippet.clone(),
            score: h.score,
        }
    }
}

/// Function tool offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Persona, scenario instruction, safety constraints, stage directive.
    pub system_sections: Vec<SystemSection>,
    pub context_blocks: Vec<ContextSnippet>,
    pub history: Vec<ChatMessage>,
    pub user_turn: String,
    pub tool_schemas: Vec<ToolSchema>,
}

pub const SECTION_ORDER: [&str; 4] = ["persona", "scenario_instruction", "safety_constraints", "stage_directive"];

impl PromptBundle {
    /// A bundle for auxiliary calls (extraction, classification) with a
    /// single instruction section.
    pub fn utility(instruction: &str, user_turn: &str) -> Self {
        Self {
            system_sections: vec![SystemSection {
                name: "task".into(),
                text: instruction.to_string(),
            }],
            context_blocks: Vec::new(),
            history: Vec::new(),
            user_turn: user_turn.to_string(),
            tool_schemas: Vec::new(),
        }
    }

    /// System message text: sections, then numbered reference material.
    pub fn system_text(&self) -> String {
        let mut out: Vec<String> = self.system_sections.iter().map(|s| s.text.clone()).collect();
        if !self.context_blocks.is_empty() {
            let mut refs = String::from("Reference material (name the source title when you draw on it):");
            for (i, c) in self.context_blocks.iter().enumerate() {
                refs.push_str(&format!("\n\n[{}] {}\n{}", i + 1, c.source, c.text));
            }
            out.push(refs);
        }
        out.join("\n\n")
    }
}

pub fn stage_directive(stage: CotStage, mode: &SessionMode, direct_answer: bool) -> String {
    let mut text = if direct_answer {
        "Answer the user's question directly and completely.".to_string()
    } else {
        match stage {
            CotStage::SymptomRecognition => {
                "Current step: symptom recognition. Summarise what the user has reported and note which \
                 diagnostic information is still missing."
            }
            CotStage::PatternDifferentiation => {
                "Current step: pattern differentiation. Weigh the likely patterns along cold-heat, \
                 deficiency-excess and interior-exterior, and the state of qi, blood and fluids; yin-yang, \
                 five-phase and zang-fu relations may inform the reasoning. Present them as possibilities."
            }
            CotStage::TreatmentPrincipleReasoning => {
                "Current step: treatment principle. Describe the general regulating direction that fits the \
                 likely pattern (for example warming, clearing, tonifying, moving) without naming herbs, \
                 doses or formulas."
            }
            CotStage::LifestyleRecommendation => {
                "Current step: everyday recommendations. Give practical suggestions on diet, sleep and rest, \
                 movement and emotional balance."
            }
        }
        .to_string()
    };
    match mode {
        SessionMode::Normal => {}
        SessionMode::ConservativeCompliant => text.push_str(
            " Restrict the answer to a tentative view of the user's constitution and everyday lifestyle \
             advice; do not state any syndrome conclusion, diagnosis, prescription or formula.",
        ),
        SessionMode::Safeguard { trigger } => text.push_str(&format!(
            " The situation involves a sensitive context ({}). Use cautious, probabilistic wording, avoid \
             firm claims, and strongly encourage an in-person professional assessment.",
            trigger.kind
        )),
    }
    text
}

pub fn safety_constraints(policy: &ScenarioPolicy, mode: &SessionMode) -> String {
    let mut rules: Vec<String> = Vec::new();
    if policy.forbids(ForbiddenClass::PrescriptionGeneration) {
        rules.push("Never give herb names with doses or any prescribing instructions.".into());
    }
    if policy.forbids(ForbiddenClass::HerbalFormulaGeneration) {
        rules.push("Never recommend or name compound herbal formulas.".into());
    }
    if policy.forbids(ForbiddenClass::DefinitiveDiagnosis) || !matches!(mode, SessionMode::Normal) {
        rules.push("Never state a definitive diagnosis.".into());
    }
    if policy.requires_citation {
        rules.push("Cite at least one authoritative source by title.".into());
    }
    if policy.advisory_on_worsening || mode.is_safeguard() {
        rules.push("Tell the user to seek professional care if symptoms worsen or persist.".into());
    }
    if let Some(d) = &policy.required_disclaimer {
        rules.push(format!(
            "End with this exact sentence (or its Chinese version for Chinese replies): \"{}\" / \"{}\"",
            d.en, d.zh
        ));
    }
    format!("Output rules:\n- {}", rules.join("\n- "))
}

/// Keeps the highest-scoring snippets within `budget` characters, counting
/// title and text. Lowest scores are dropped first; among equal scores the
/// later snippet goes first. Survivors keep their input order.
pub fn truncate_context(snippets: &[ContextSnippet], budget: usize) -> Vec<ContextSnippet> {
    let size = |c: &ContextSnippet| c.source.chars().count() + c.text.chars().count();
    let mut keep = vec![true; snippets.len()];
    let mut total: usize = snippets.iter().map(size).sum();
    let mut order: Vec<usize> = (0..snippets.len()).collect();
    order.sort_by(|&a, &b| snippets[a].score.total_cmp(&snippets[b].score).then(b.cmp(&a)));
    for i in order {
        if total <= budget {
            break;
        }
        keep[i] = false;
        total -= size(&snippets[i]);
    }
    snippets
        .iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(s, _)| s.clone())
        .collect()
}

pub struct PromptInputs<'a> {
    pub persona: &'a PersonaProfile,
    pub policy: &'a ScenarioPolicy,
    pub stage: CotStage,
    pub mode: &'a SessionMode,
    pub direct_answer: bool,
    pub context: &'a [ContextSnippet],
    pub history: &'a [ChatMessage],
    pub user_turn: &'a str,
    pub tool_schemas: &'a [ToolSchema],
    pub context_budget: usize,
}

/// Builds the prompt for a reply. Pure: equal inputs give equal bundles.
pub fn assemble_prompt(inputs: &PromptInputs<'_>) -> PromptBundle {
    let texts = [
        inputs.persona.text.clone(),
        inputs.policy.instruction_text.clone(),
        safety_constraints(inputs.policy, inputs.mode),
        stage_directive(inputs.stage, inputs.mode, inputs.direct_answer),
    ];
    PromptBundle {
        system_sections: SECTION_ORDER
            .iter()
            .zip(texts)
            .map(|(name, text)| SystemSection { name: name.to_string(), text })
            .collect(),
        context_blocks: truncate_context(inputs.context, inputs.context_budget),
        history: inputs.history.to_vec(),
        user_turn: inputs.user_turn.to_string(),
        tool_schemas: inputs.tool_schemas.to_vec(),
    }
}
