use std::sync::OnceLock;

use jsonschema::JSONSchema;
use serde_json::Value;

use super::{Gateway, GatewayError, PromptBundle, Purpose, RequestMeta};
use crate::consult::{DiagnosticElement, ExtractedFinding, FindingSource};
use crate::scenario::{ScenarioFallback, ScenarioId};

pub const FINDING_SCHEMA: &str = include_str!("../../data/schemas/finding.schema.json");

pub const EXTRACTION_INSTRUCTION: &str = "Extract diagnostic findings from the user's message. \
Reply with JSON only, shaped as {\"findings\": [{\"element\": E, \"finding\": text, \"confidence\": number 0..1}]}, \
where E is one of ColdHeat, DeficiencyExcess, InteriorExterior, Qi, Blood, Fluids. \
Report only what the user actually said; return {\"findings\": []} when nothing applies.";

const CLASSIFY_INSTRUCTION: &str = "Decide which consultation scenario the user's message belongs to. \
Reply with JSON only: {\"scenario\": S, \"confidence\": number 0..1}, where S is one of: ";

fn finding_schema() -> &'static JSONSchema {
    static SCHEMA: OnceLock<JSONSchema> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        let v: Value = serde_json::from_str(FINDING_SCHEMA).expect("shipped schema parses");
        JSONSchema::compile(&v).expect("shipped schema compiles")
    })
}

/// Pulls the outermost JSON object out of model text, tolerating code fences
/// and surrounding prose.
fn json_object(raw: &str) -> Option<Value> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&raw[start..=end]).ok()
}

/// Parses extraction output. Entries failing the finding schema are dropped.
///
/// Blank output and an explicit empty `findings` array both mean "nothing
/// found"; any other output that yields no valid entry is malformed.
pub fn parse_findings(raw: &str) -> Result<Vec<ExtractedFinding>, GatewayError> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    let malformed = || GatewayError::MalformedStructuredOutput { raw: raw.to_string() };
    let v = json_object(raw).ok_or_else(malformed)?;
    let entries = v.get("findings").and_then(Value::as_array).ok_or_else(malformed)?;
    if entries.is_empty() {
        return Ok(Vec::new());
    }
    let schema = finding_schema();
    let mut out = Vec::new();
    for entry in entries {
        if !schema.is_valid(entry) {
            tracing::warn!(entry = %entry, "dropping extraction entry that fails the finding schema");
            continue;
        }
        let element: DiagnosticElement = match entry["element"].as_str().unwrap_or("").parse() {
            Ok(e) => e,
            Err(_) => continue,
        };
        out.push(ExtractedFinding {
            element,
            finding: entry["finding"].as_str().unwrap_or("").trim().to_string(),
            confidence: entry.get("confidence").and_then(Value::as_f64).unwrap_or(1.0),
            source: FindingSource::Model,
        });
    }
    if out.is_empty() {
        return Err(malformed());
    }
    Ok(out)
}

/// Scenario classifier that asks the model when cue matching is
/// inconclusive.
pub struct LlmScenarioClassifier<'a> {
    pub gateway: &'a Gateway,
}

impl ScenarioFallback for LlmScenarioClassifier<'_> {
    fn classify(&self, message: &str, history: &[String], candidates: &[ScenarioId]) -> Result<(ScenarioId, f64), String> {
        let names: Vec<&str> = candidates.iter().map(|c| c.as_str()).collect();
        let mut bundle = PromptBundle::utility(&format!("{CLASSIFY_INSTRUCTION}{}.", names.join(", ")), message);
        bundle.history = history.iter().rev().take(4).rev().map(|h| super::ChatMessage::user(h.clone())).collect();
        let resp = self
            .gateway
            .complete(&bundle, RequestMeta::new(Purpose::ScenarioClassification))
            .map_err(|e| e.to_string())?;
        let v = json_object(&resp.text).ok_or_else(|| format!("unparseable classification: {}", resp.text))?;
        let scenario: ScenarioId = v
            .get("scenario")
            .and_then(Value::as_str)
            .ok_or("classification without scenario")?
            .parse()?;
        if !candidates.contains(&scenario) {
            return Err(format!("model chose {scenario}, outside the candidates"));
        }
        let confidence = v.get("confidence").and_then(Value::as_f64).unwrap_or(0.5);
        Ok((scenario, confidence))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Script, ScriptRule, ScriptedBackend, ScriptedReply};
    use crate::scenario::{classify, CueLexicon};
    use std::sync::Arc;

    #[test]
    fn one_valid_triple() {
        let f = parse_findings(r#"{"findings":[{"element":"ColdHeat","finding":"cold hands","confidence":0.9}]}"#).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].element, DiagnosticElement::ColdHeat);
        assert_eq!(f[0].source, FindingSource::Model);
    }

    #[test]
    fn unknown_element_dropped() {
        let f = parse_findings(
            "```json\n{\"findings\":[{\"element\":\"Wind\",\"finding\":\"x\"},{\"element\":\"Qi\",\"finding\":\"tired\"}]}\n```",
        )
        .unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].element, DiagnosticElement::Qi);
    }

    #[test]
    fn empty_outputs() {
        assert!(parse_findings("").unwrap().is_empty());
        assert!(parse_findings("  {\"findings\": []} ").unwrap().is_empty());
    }

    #[test]
    fn malformed_outputs() {
        assert!(matches!(parse_findings("I think you are cold"), Err(GatewayError::MalformedStructuredOutput { .. })));
        assert!(parse_findings(r#"{"findings":[{"element":"Wind","finding":"x"}]}"#).is_err());
        assert!(parse_findings(r#"{"findings":[{"element":"Qi","finding":"x","confidence":3}]}"#).is_err());
    }

    #[test]
    fn model_breaks_ambiguity() {
        let b = Arc::new(ScriptedBackend::new(Script::default()));
        b.push_rule(ScriptRule::purpose(
            Purpose::ScenarioClassification,
            ScriptedReply::text(r#"{"scenario":"SeasonalWellness","confidence":0.8}"#),
        ));
        let g = Gateway::scripted(b);
        let llm = LlmScenarioClassifier { gateway: &g };
        let d = classify("I have a headache every winter", &[], &CueLexicon::defaults(), Some(&llm));
        assert_eq!(d.scenario, ScenarioId::SeasonalWellness);
        assert_eq!(d.confidence, 0.8);
    }

    #[test]
    fn off_candidate_answer_falls_back() {
        let b = Arc::new(ScriptedBackend::new(Script::default()));
        b.push_rule(ScriptRule::purpose(
            Purpose::ScenarioClassification,
            ScriptedReply::text(r#"{"scenario":"TheoryLearning","confidence":0.9}"#),
        ));
        let g = Gateway::scripted(b);
        let llm = LlmScenarioClassifier { gateway: &g };
        let d = classify("I have a headache every winter", &[], &CueLexicon::defaults(), Some(&llm));
        assert_eq!(d.scenario, ScenarioId::MildDiscomfort);
    }
}
