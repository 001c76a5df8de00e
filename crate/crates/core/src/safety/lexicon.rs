use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::scenario::{compile_cue, LexiconError};

pub const DEFAULT_SAFETY_LEXICON: &str = include_str!("../../data/safety_lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct LangPair {
    pub en: String,
    pub zh: String,
}

impl LangPair {
    pub fn pick(&self, chinese: bool) -> &str {
        if chinese { &self.zh } else { &self.en }
    }

    pub fn variants(&self) -> [&str; 2] {
        [&self.en, &self.zh]
    }
}

#[derive(Deserialize)]
struct RawLexicon {
    version: u32,
    formula_names: Vec<String>,
    herb_names: Vec<String>,
    dosage_pattern: String,
    prescribing_verbs: String,
    diagnosis_patterns: Vec<String>,
    conservative_patterns: Vec<String>,
    citation_markers: Vec<String>,
    authoritative_titles: Vec<String>,
    advisory: LangPair,
    refusal: LangPair,
    citation_placeholder: LangPair,
    unsourced_title: LangPair,
}

/// Compiled violation lexicon.
#[derive(Debug, Clone)]
pub struct SafetyLexicon {
    pub version: u32,
    prescription: Vec<Regex>,
    formulas: Vec<Regex>,
    diagnosis: Vec<Regex>,
    conservative: Vec<Regex>,
    citation_markers: Vec<String>,
    authoritative_titles: Vec<String>,
    advisory: LangPair,
    refusal: LangPair,
    citation_placeholder: LangPair,
    unsourced_title: LangPair,
}

fn word_bounded(p: &str) -> String {
    if p.is_ascii() {
        format!(r"\b(?:{p})\b")
    } else {
        p.to_string()
    }
}

impl SafetyLexicon {
    pub fn from_json(json: &str) -> Result<Self, LexiconError> {
        let raw: RawLexicon = serde_json::from_str(json)?;
        let herbs = raw.herb_names.iter().map(|h| word_bounded(h)).collect::<Vec<_>>().join("|");
        let dose = &raw.dosage_pattern;
        let verbs = &raw.prescribing_verbs;
        let prescription = vec![
            compile_cue(&format!(r"(?:{dose})\s*(?:of\s+)?(?:{herbs})"))?,
            compile_cue(&format!(r"(?:{herbs})\s*[:：(（]?\s*(?:{dose})"))?,
            compile_cue(&format!(r"(?:{verbs})[^.。\n]{{0,40}}?(?:{herbs})"))?,
        ];
        let many = |ps: &[String], bounded: bool| -> Result<Vec<Regex>, LexiconError> {
            ps.iter()
                .map(|p| if bounded { compile_cue(&word_bounded(p)) } else { compile_cue(p) })
                .collect()
        };
        Ok(Self {
            version: raw.version,
            prescription,
            formulas: many(&raw.formula_names, true)?,
            diagnosis: many(&raw.diagnosis_patterns, false)?,
            conservative: many(&raw.conservative_patterns, false)?,
            citation_markers: raw.citation_markers,
            authoritative_titles: raw.authoritative_titles,
            advisory: raw.advisory,
            refusal: raw.refusal,
            citation_placeholder: raw.citation_placeholder,
            unsourced_title: raw.unsourced_title,
        })
    }

    pub fn defaults() -> Self {
        static DEFAULT: OnceLock<SafetyLexicon> = OnceLock::new();
        DEFAULT
            .get_or_init(|| Self::from_json(DEFAULT_SAFETY_LEXICON).expect("shipped safety lexicon compiles"))
            .clone()
    }

    pub fn prescription_patterns(&self) -> &[Regex] {
        &self.prescription
    }

    pub fn formula_patterns(&self) -> &[Regex] {
        &self.formulas
    }

    pub fn diagnosis_patterns(&self) -> &[Regex] {
        &self.diagnosis
    }

    pub fn conservative_patterns(&self) -> &[Regex] {
        &self.conservative
    }

    pub fn citation_markers(&self) -> &[String] {
        &self.citation_markers
    }

    pub fn authoritative_titles(&self) -> &[String] {
        &self.authoritative_titles
    }

    pub fn advisory(&self) -> &LangPair {
        &self.advisory
    }

    pub fn refusal(&self) -> &LangPair {
        &self.refusal
    }

    /// Citation line for `title`, or for the unsourced placeholder when no
    /// document was retrieved.
    pub fn citation_line(&self, title: Option<&str>, chinese: bool) -> String {
        let title = title.unwrap_or_else(|| self.unsourced_title.pick(chinese));
        self.citation_placeholder.pick(chinese).replace("{title}", title)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_lexicon_compiles() {
        let l = SafetyLexicon::defaults();
        assert_eq!(l.prescription_patterns().len(), 3);
        assert!(!l.formula_patterns().is_empty());
    }

    #[test]
    fn dose_before_or_after_herb() {
        let l = SafetyLexicon::defaults();
        let hit = |s: &str| l.prescription_patterns().iter().any(|r| r.is_match(s));
        assert!(hit("9g ephedra"));
        assert!(hit("15 grams of astragalus"));
        assert!(hit("Astragalus: 30 g"));
        assert!(hit("黄芪30克"));
        assert!(hit("decoct the ginseng for 20 minutes"));
        assert!(!hit("eat 200g of pears"));
        assert!(!hit("ginseng is a famous root"));
    }

    #[test]
    fn citation_line_templates() {
        let l = SafetyLexicon::defaults();
        assert_eq!(l.citation_line(Some("Huangdi Neijing"), false), "Source: Huangdi Neijing");
        assert!(l.citation_line(None, true).starts_with("来源："));
    }
}
