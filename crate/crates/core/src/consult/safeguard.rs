use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ExtractedFinding;
use crate::scenario::{compile_cue, LexiconError};

pub const DEFAULT_SAFEGUARD_CUES: &str = include_str!("../../data/safeguard_cues.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SafeguardKind {
    AcuteSevere,
    Pregnancy,
    Pediatric,
    ChronicDisease,
}

impl SafeguardKind {
    /// Detection order; the first matching kind wins.
    pub const PRIORITY: [SafeguardKind; 4] = [
        SafeguardKind::AcuteSevere,
        SafeguardKind::Pregnancy,
        SafeguardKind::Pediatric,
        SafeguardKind::ChronicDisease,
    ];
}

impl fmt::Display for SafeguardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafeguardTrigger {
    pub kind: SafeguardKind,
    /// The matched text.
    pub evidence: String,
}

#[derive(Debug, Clone)]
pub struct SafeguardDetector {
    cues: Vec<(SafeguardKind, Vec<Regex>)>,
}

impl SafeguardDetector {
    pub fn from_json(json: &str) -> Result<Self, LexiconError> {
        let raw: BTreeMap<SafeguardKind, Vec<String>> = serde_json::from_str(json)?;
        let mut cues = Vec::new();
        for kind in SafeguardKind::PRIORITY {
            let patterns = raw.get(&kind).map(Vec::as_slice).unwrap_or(&[]);
            let compiled = patterns.iter().map(|p| compile_cue(p)).collect::<Result<Vec<_>, _>>()?;
            cues.push((kind, compiled));
        }
        Ok(Self { cues })
    }

    pub fn defaults() -> &'static Self {
        static DEFAULT: OnceLock<SafeguardDetector> = OnceLock::new();
        DEFAULT.get_or_init(|| Self::from_json(DEFAULT_SAFEGUARD_CUES).expect("shipped safeguard cues compile"))
    }

    pub fn detect(&self, text: &str, findings: &[ExtractedFinding]) -> Option<SafeguardTrigger> {
        for (kind, patterns) in &self.cues {
            let sources = std::iter::once(text).chain(findings.iter().map(|f| f.finding.as_str()));
            for source in sources {
                if let Some(m) = patterns.iter().find_map(|re| re.find(source)) {
                    return Some(SafeguardTrigger {
                        kind: *kind,
                        evidence: m.as_str().to_string(),
                    });
                }
            }
        }
        None
    }
}

/// Checks a user turn, and any findings extracted from it, against the
/// built-in safeguard cues.
pub fn detect_safeguard(turn_text: &str, findings: &[ExtractedFinding]) -> Option<SafeguardTrigger> {
    SafeguardDetector::defaults().detect(turn_text, findings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(text: &str) -> Option<SafeguardKind> {
        detect_safeguard(text, &[]).map(|t| t.kind)
    }

    #[test]
    fn pregnancy() {
        let t = detect_safeguard("I am pregnant and have headaches", &[]).unwrap();
        assert_eq!(t.kind, SafeguardKind::Pregnancy);
        assert_eq!(t.evidence, "pregnant");
    }

    #[test]
    fn pediatric() {
        assert_eq!(kind("my 3-year-old son has a cough"), Some(SafeguardKind::Pediatric));
        assert_eq!(kind("我家宝宝最近不爱吃饭"), Some(SafeguardKind::Pediatric));
    }

    #[test]
    fn no_cue() {
        assert_eq!(kind("I enjoy spring hiking"), None);
    }

    #[test]
    fn acute_outranks_pregnancy() {
        assert_eq!(kind("I'm pregnant and have chest pain"), Some(SafeguardKind::AcuteSevere));
    }

    #[test]
    fn pregnancy_outranks_chronic() {
        assert_eq!(kind("pregnant with chronic asthma"), Some(SafeguardKind::Pregnancy));
        assert_eq!(kind("我有高血压"), Some(SafeguardKind::ChronicDisease));
    }

    #[test]
    fn findings_are_scanned_too() {
        let f = ExtractedFinding {
            element: crate::consult::DiagnosticElement::Blood,
            finding: "history of diabetes".into(),
            confidence: 0.9,
            source: crate::consult::FindingSource::Model,
        };
        assert_eq!(detect_safeguard("nothing here", &[f]).unwrap().kind, SafeguardKind::ChronicDisease);
    }
}
