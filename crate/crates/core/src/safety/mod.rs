//! Output compliance: disclaimers, risk advisories, citations, and the ban
//! on prescriptions and definitive diagnoses.
//!
//! [`SafetyGuard::check`] is a deterministic lexicon scan; [`SafetyGuard::enforce`]
//! repairs a reply until it passes, regenerating content violations at most
//! twice before redacting the offending spans.

mod enforce;
mod lexicon;

use serde::{Deserialize, Serialize};

use crate::consult::SessionMode;
use crate::scenario::{ForbiddenClass, ScenarioPolicy};
use crate::text::is_mostly_cjk;

pub use enforce::{AppliedFix, SafeReply, MAX_REGENERATIONS};
pub(crate) use enforce::kind_names;
pub use lexicon::{SafetyLexicon, DEFAULT_SAFETY_LEXICON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    DisclaimerMissing,
    ForbiddenPrescription,
    ForbiddenDiagnosis,
    MissingCitation,
    MissingRiskAdvisory,
}

impl ViolationKind {
    /// Violations that only a rewrite of the content can fix.
    pub fn is_content(self) -> bool {
        matches!(self, ViolationKind::ForbiddenPrescription | ViolationKind::ForbiddenDiagnosis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Byte range in the reply; empty at the end of the text for missing content.
    pub span: (usize, usize),
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub violations: Vec<Violation>,
    pub passed: bool,
}

impl ComplianceReport {
    fn new(violations: Vec<Violation>) -> Self {
        let passed = violations.is_empty();
        Self { violations, passed }
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn kinds(&self) -> Vec<ViolationKind> {
        let mut k: Vec<_> = self.violations.iter().map(|v| v.kind).collect();
        k.dedup();
        k
    }
}

/// Compiled safety lexicon plus the check and enforce operations.
#[derive(Debug, Clone)]
pub struct SafetyGuard {
    lexicon: SafetyLexicon,
}

impl Default for SafetyGuard {
    fn default() -> Self {
        Self::new(SafetyLexicon::defaults())
    }
}

impl SafetyGuard {
    pub fn new(lexicon: SafetyLexicon) -> Self {
        Self { lexicon }
    }

    pub fn lexicon(&self) -> &SafetyLexicon {
        &self.lexicon
    }

    /// Whether replies under `policy` and `mode` must carry the risk advisory.
    pub fn advisory_required(policy: &ScenarioPolicy, mode: &SessionMode) -> bool {
        mode.is_safeguard() || policy.advisory_on_worsening
    }

    fn diagnosis_forbidden(policy: &ScenarioPolicy, mode: &SessionMode) -> bool {
        policy.forbids(ForbiddenClass::DefinitiveDiagnosis) || !matches!(mode, SessionMode::Normal)
    }

    /// Content violations only: prescriptions and diagnoses.
    pub fn content_violations(&self, reply: &str, policy: &ScenarioPolicy, mode: &SessionMode) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |kind, m: regex::Match<'_>| {
            out.push(Violation {
                kind,
                span: (m.start(), m.end()),
                evidence: m.as_str().to_string(),
            })
        };
        if policy.forbids(ForbiddenClass::PrescriptionGeneration) {
            for re in self.lexicon.prescription_patterns() {
                re.find_iter(reply).for_each(|m| push(ViolationKind::ForbiddenPrescription, m));
            }
        }
        if policy.forbids(ForbiddenClass::HerbalFormulaGeneration) {
            for re in self.lexicon.formula_patterns() {
                re.find_iter(reply).for_each(|m| push(ViolationKind::ForbiddenPrescription, m));
            }
        }
        if Self::diagnosis_forbidden(policy, mode) {
            for re in self.lexicon.diagnosis_patterns() {
                re.find_iter(reply).for_each(|m| push(ViolationKind::ForbiddenDiagnosis, m));
            }
        }
        if matches!(mode, SessionMode::ConservativeCompliant) {
            for re in self.lexicon.conservative_patterns() {
                re.find_iter(reply).for_each(|m| push(ViolationKind::ForbiddenDiagnosis, m));
            }
        }
        out.sort_by_key(|v| (v.span, v.kind));
        out
    }

    pub fn has_citation(&self, reply: &str) -> bool {
        self.lexicon.citation_markers().iter().any(|m| reply.contains(m.as_str()))
            || self.lexicon.authoritative_titles().iter().any(|t| reply.contains(t.as_str()))
    }

    pub fn has_advisory(&self, reply: &str) -> bool {
        self.lexicon.advisory().variants().iter().any(|a| reply.contains(a))
    }

    pub fn check(&self, reply: &str, policy: &ScenarioPolicy, mode: &SessionMode) -> ComplianceReport {
        let end = (reply.len(), reply.len());
        let mut violations = self.content_violations(reply, policy, mode);
        if let Some(d) = &policy.required_disclaimer {
            if !d.variants().iter().any(|v| reply.contains(v)) {
                violations.push(Violation {
                    kind: ViolationKind::DisclaimerMissing,
                    span: end,
                    evidence: String::new(),
                });
            }
        }
        if policy.requires_citation && !self.has_citation(reply) {
            violations.push(Violation {
                kind: ViolationKind::MissingCitation,
                span: end,
                evidence: String::new(),
            });
        }
        if Self::advisory_required(policy, mode) && !self.has_advisory(reply) {
            violations.push(Violation {
                kind: ViolationKind::MissingRiskAdvisory,
                span: end,
                evidence: String::new(),
            });
        }
        ComplianceReport::new(violations)
    }
}

/// Language of the templates appended to `reply`.
pub(crate) fn prefers_chinese(reply: &str) -> bool {
    is_mostly_cjk(reply)
}
