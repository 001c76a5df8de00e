use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::DiagnosticElement;
use crate::scenario::{compile_cue, LexiconError};

pub const DEFAULT_EXTRACTION_CUES: &str = include_str!("../../data/extraction_cues.json");
pub const DEFAULT_DECLINE_CUES: &str = include_str!("../../data/decline_cues.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FindingSource {
    Model,
    Rules,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedFinding {
    pub element: DiagnosticElement,
    pub finding: String,
    pub confidence: f64,
    pub source: FindingSource,
}

#[derive(Deserialize)]
struct CueEntry {
    pattern: String,
    element: DiagnosticElement,
    finding: String,
}

/// Lexicon-driven finding extractor, used offline and when the model's
/// structured output cannot be parsed.
#[derive(Debug, Clone)]
pub struct RuleExtractor {
    cues: Vec<(Regex, DiagnosticElement, String)>,
}

impl RuleExtractor {
    pub fn from_json(json: &str) -> Result<Self, LexiconError> {
        let entries: Vec<CueEntry> = serde_json::from_str(json)?;
        let cues = entries
            .into_iter()
            .map(|e| Ok((compile_cue(&e.pattern)?, e.element, e.finding)))
            .collect::<Result<_, LexiconError>>()?;
        Ok(Self { cues })
    }

    pub fn defaults() -> &'static Self {
        static DEFAULT: OnceLock<RuleExtractor> = OnceLock::new();
        DEFAULT.get_or_init(|| Self::from_json(DEFAULT_EXTRACTION_CUES).expect("shipped extraction cues compile"))
    }

    /// At most one finding per element: the first cue in file order that
    /// matches.
    pub fn extract(&self, text: &str) -> Vec<ExtractedFinding> {
        let mut out: Vec<ExtractedFinding> = Vec::new();
        for (re, element, finding) in &self.cues {
            if out.iter().any(|f| f.element == *element) {
                continue;
            }
            if re.is_match(text) {
                out.push(ExtractedFinding {
                    element: *element,
                    finding: finding.clone(),
                    confidence: 1.0,
                    source: FindingSource::Rules,
                });
            }
        }
        out
    }
}

/// Recognises turns in which the user refuses to answer further questions.
#[derive(Debug, Clone)]
pub struct DeclineDetector {
    cues: Vec<Regex>,
}

impl DeclineDetector {
    pub fn from_json(json: &str) -> Result<Self, LexiconError> {
        let raw: Vec<String> = serde_json::from_str(json)?;
        let cues = raw.iter().map(|p| compile_cue(p)).collect::<Result<_, _>>()?;
        Ok(Self { cues })
    }

    pub fn defaults() -> &'static Self {
        static DEFAULT: OnceLock<DeclineDetector> = OnceLock::new();
        DEFAULT.get_or_init(|| Self::from_json(DEFAULT_DECLINE_CUES).expect("shipped decline cues compile"))
    }

    pub fn is_decline(&self, text: &str) -> bool {
        self.cues.iter().any(|re| re.is_match(text))
    }
}
