use std::collections::BTreeMap;

use regex::{Regex, RegexBuilder};
use thiserror::Error;

use super::ScenarioId;

/// Shipped bilingual cue lexicon: a JSON map from scenario to cue patterns.
pub const DEFAULT_SCENARIO_CUES: &str = include_str!("../../data/scenario_cues.json");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid cue pattern '{pattern}': {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

/// Compiles a cue pattern case-insensitively.
pub(crate) fn compile_cue(pattern: &str) -> Result<Regex, LexiconError> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|source| LexiconError::Pattern {
            pattern: pattern.to_string(),
            source,
        })
}

/// Compiled cue patterns per scenario. A cue's identifier is its pattern text.
#[derive(Debug, Clone)]
pub struct CueLexicon {
    cues: BTreeMap<ScenarioId, Vec<(String, Regex)>>,
}

impl CueLexicon {
    pub fn from_json(json: &str) -> Result<Self, LexiconError> {
        let raw: BTreeMap<ScenarioId, Vec<String>> = serde_json::from_str(json)?;
        let mut cues = BTreeMap::new();
        for (scenario, patterns) in raw {
            let compiled = patterns
                .into_iter()
                .map(|p| compile_cue(&p).map(|re| (p, re)))
                .collect::<Result<Vec<_>, _>>()?;
            cues.insert(scenario, compiled);
        }
        Ok(Self { cues })
    }

    pub fn defaults() -> Self {
        Self::from_json(DEFAULT_SCENARIO_CUES).expect("shipped scenario lexicon is valid")
    }

    /// Scenarios with at least one matching cue, with the matching cue ids.
    pub fn matches(&self, text: &str) -> BTreeMap<ScenarioId, Vec<String>> {
        self.cues
            .iter()
            .filter_map(|(s, cues)| {
                let hit: Vec<String> = cues
                    .iter()
                    .filter(|(_, re)| re.is_match(text))
                    .map(|(id, _)| id.clone())
                    .collect();
                (!hit.is_empty()).then_some((*s, hit))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_all_four() {
        let lex = CueLexicon::defaults();
        assert_eq!(lex.cues.len(), 4);
    }

    #[test]
    fn bad_pattern_rejected() {
        let err = CueLexicon::from_json(r#"{"TheoryLearning": ["("]}"#).unwrap_err();
        assert!(matches!(err, LexiconError::Pattern { .. }));
    }

    #[test]
    fn unknown_scenario_rejected() {
        assert!(CueLexicon::from_json(r#"{"Surgery": ["knife"]}"#).is_err());
    }
}
