use serde::{Deserialize, Serialize};

use super::{prefers_chinese, ComplianceReport, SafetyGuard, Violation, ViolationKind};
use crate::consult::SessionMode;
use crate::scenario::ScenarioPolicy;

/// Regeneration attempts before offending spans are redacted.
pub const MAX_REGENERATIONS: u32 = 2;

const MAX_REDACTION_PASSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fix")]
pub enum AppliedFix {
    Regenerated { attempts: u32 },
    SpansRedacted { spans: usize },
    CitationAppended { line: String },
    AdvisoryAppended,
    DisclaimerAppended,
    /// The whole reply was replaced by the refusal template.
    FullRefusal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafeReply {
    pub text: String,
    pub applied_fixes: Vec<AppliedFix>,
    pub regeneration_count: u32,
}

impl SafeReply {
    pub fn fallback_used(&self) -> bool {
        self.applied_fixes
            .iter()
            .any(|f| matches!(f, AppliedFix::SpansRedacted { .. } | AppliedFix::FullRefusal))
    }
}

fn corrective_instruction(violations: &[Violation]) -> String {
    let mut evidence: Vec<&str> = violations.iter().map(|v| v.evidence.as_str()).collect();
    evidence.sort_unstable();
    evidence.dedup();
    format!(
        "Your previous reply broke the output rules. Rewrite it without herb dosages, named herbal \
         formulas, prescribing instructions or definitive diagnostic conclusions; keep to hedged, \
         general self-care and lifestyle advice. Offending passages: {}",
        evidence.join(" | ")
    )
}

fn append_paragraph(text: &mut String, para: &str) {
    let trimmed = text.trim_end().len();
    text.truncate(trimmed);
    if !text.is_empty() {
        text.push_str("\n\n");
    }
    text.push_str(para);
}

fn merged_spans(violations: &[Violation]) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = violations.iter().map(|v| v.span).collect();
    spans.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (s, e) in spans {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn ends_sentence(text: &str, i: usize, c: char) -> bool {
    match c {
        '!' | '?' | '。' | '！' | '？' | '\n' => true,
        '.' => text[i + 1..].chars().next().is_none_or(char::is_whitespace),
        _ => false,
    }
}

/// Widens each span to the sentence around it and merges sentences that
/// are only whitespace apart.
fn sentence_spans(text: &str, spans: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &(s, e) in spans {
        let start = text[..s]
            .char_indices()
            .rev()
            .find(|&(i, c)| ends_sentence(text, i, c))
            .map_or(0, |(i, c)| i + c.len_utf8());
        let start = start + (text[start..s].len() - text[start..s].trim_start().len());
        let end = match text[e..].char_indices().find(|&(i, c)| ends_sentence(text, e + i, c)) {
            Some((i, '\n')) => e + i,
            Some((i, c)) => e + i + c.len_utf8(),
            None => text.len(),
        };
        let (start, end) = (start.min(s), end.max(e));
        match out.last_mut() {
            Some(last) if start <= last.1 || text[last.1..start].trim().is_empty() => last.1 = last.1.max(end),
            _ => out.push((start, end)),
        }
    }
    out
}

impl SafetyGuard {
    /// Replaces every sentence holding a content violation with the refusal
    /// template, repeating until none remain.
    fn redact(&self, text: &str, policy: &ScenarioPolicy, mode: &SessionMode) -> Option<(String, usize)> {
        let refusal = self.lexicon.refusal().pick(prefers_chinese(text)).to_string();
        let mut out = text.to_string();
        let mut total = 0;
        for _ in 0..MAX_REDACTION_PASSES {
            let found = self.content_violations(&out, policy, mode);
            if found.is_empty() {
                return Some((out, total));
            }
            let spans = sentence_spans(&out, &merged_spans(&found));
            total += spans.len();
            for (s, e) in spans.into_iter().rev() {
                out.replace_range(s..e, &refusal);
            }
        }
        None
    }

    fn append_templates(
        &self,
        text: &mut String,
        policy: &ScenarioPolicy,
        mode: &SessionMode,
        source: Option<&str>,
        fixes: &mut Vec<AppliedFix>,
    ) {
        let chinese = prefers_chinese(text);
        if policy.requires_citation && !self.has_citation(text) {
            let line = self.lexicon.citation_line(source, chinese);
            append_paragraph(text, &line);
            fixes.push(AppliedFix::CitationAppended { line });
        }
        if Self::advisory_required(policy, mode) && !self.has_advisory(text) {
            append_paragraph(text, self.lexicon.advisory().pick(chinese));
            fixes.push(AppliedFix::AdvisoryAppended);
        }
        if let Some(d) = &policy.required_disclaimer {
            if !d.variants().iter().any(|v| text.contains(v)) {
                append_paragraph(text, if chinese { &d.zh } else { &d.en });
                fixes.push(AppliedFix::DisclaimerAppended);
            }
        }
    }

    /// Repairs `reply` so that [`SafetyGuard::check`] passes.
    ///
    /// Compliant replies come back byte-identical. Prescription and
    /// diagnosis violations are sent back through `regenerate` with a
    /// corrective instruction, at most [`MAX_REGENERATIONS`] times; spans
    /// that still violate are replaced by the refusal template. Missing
    /// citation, advisory and disclaimer are then appended in that order, so
    /// the disclaimer is always the final paragraph. `sources` are the titles
    /// of documents retrieved for the reply; the first one is cited.
    pub fn enforce(
        &self,
        reply: &str,
        policy: &ScenarioPolicy,
        mode: &SessionMode,
        report: &ComplianceReport,
        sources: &[String],
        regenerate: &mut dyn FnMut(&str) -> Result<String, String>,
    ) -> SafeReply {
        if report.passed && self.check(reply, policy, mode).passed {
            return SafeReply {
                text: reply.to_string(),
                applied_fixes: Vec::new(),
                regeneration_count: 0,
            };
        }

        let mut fixes = Vec::new();
        let mut text = reply.to_string();
        let mut content = self.content_violations(&text, policy, mode);
        let mut attempts = 0;
        while !content.is_empty() && attempts < MAX_REGENERATIONS {
            attempts += 1;
            match regenerate(&corrective_instruction(&content)) {
                Ok(t) => {
                    text = t;
                    content = self.content_violations(&text, policy, mode);
                }
                Err(e) => tracing::warn!(error = %e, attempt = attempts, "regeneration failed"),
            }
        }
        if attempts > 0 {
            fixes.push(AppliedFix::Regenerated { attempts });
        }
        if !content.is_empty() {
            match self.redact(&text, policy, mode) {
                Some((clean, spans)) => {
                    text = clean;
                    fixes.push(AppliedFix::SpansRedacted { spans });
                }
                None => {
                    text = self.lexicon.refusal().pick(prefers_chinese(&text)).to_string();
                    fixes.push(AppliedFix::FullRefusal);
                }
            }
        }

        let source = sources.first().map(String::as_str);
        self.append_templates(&mut text, policy, mode, source, &mut fixes);

        if !self.check(&text, policy, mode).passed {
            let chinese = prefers_chinese(&text);
            text = self.lexicon.refusal().pick(chinese).to_string();
            fixes.push(AppliedFix::FullRefusal);
            self.append_templates(&mut text, policy, mode, None, &mut fixes);
        }
        debug_assert!(self.check(&text, policy, mode).passed);
        SafeReply {
            text,
            applied_fixes: fixes,
            regeneration_count: attempts,
        }
    }
}

/// Kinds present in a report, for compliance events.
pub(crate) fn kind_names(report: &ComplianceReport) -> Vec<String> {
    report.kinds().iter().map(|k: &ViolationKind| format!("{k:?}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consult::{SafeguardKind, SafeguardTrigger};
    use crate::scenario::{PolicyBook, ScenarioId};
    use proptest::prelude::*;

    fn policy(s: ScenarioId) -> ScenarioPolicy {
        PolicyBook::defaults().policy_for(s)
    }

    fn run(
        reply: &str,
        s: ScenarioId,
        mode: &SessionMode,
        regen: &mut dyn FnMut(&str) -> Result<String, String>,
    ) -> SafeReply {
        let g = SafetyGuard::default();
        let p = policy(s);
        let report = g.check(reply, &p, mode);
        g.enforce(reply, &p, mode, &report, &["Huangdi Neijing".to_string()], regen)
    }

    fn never(_: &str) -> Result<String, String> {
        panic!("regeneration not expected")
    }

    #[test]
    fn appends_exact_disclaimer() {
        let reply = "Go to bed earlier and eat warm, light food. If symptoms get worse or do not improve, see a qualified medical professional without delay.";
        let out = run(reply, ScenarioId::MildDiscomfort, &SessionMode::Normal, &mut never);
        assert_eq!(
            out.text,
            format!("{reply}\n\nThe following content is for reference only and cannot replace professional diagnosis or prescription.")
        );
        assert_eq!(out.applied_fixes, vec![AppliedFix::DisclaimerAppended]);
    }

    #[test]
    fn compliant_reply_is_untouched() {
        let reply = "Yin and Yang, as the Huangdi Neijing explains, are complementary.  \n";
        let out = run(reply, ScenarioId::TheoryLearning, &SessionMode::Normal, &mut never);
        assert_eq!(out.text, reply);
        assert!(out.applied_fixes.is_empty());
    }

    #[test]
    fn one_clean_regeneration() {
        let mut calls = 0;
        let mut regen = |instr: &str| {
            calls += 1;
            assert!(instr.contains("9g ephedra"));
            Ok("Eat seasonal pears and sleep early.".to_string())
        };
        let out = run("decoct 9g ephedra daily", ScenarioId::SeasonalWellness, &SessionMode::Normal, &mut regen);
        assert_eq!(out.regeneration_count, 1);
        assert!(out.text.starts_with("Eat seasonal pears"));
        assert!(out.text.ends_with("professional diagnosis or prescription."));
        assert!(!out.fallback_used());
        assert_eq!(calls, 1);
    }

    #[test]
    fn stubborn_model_gets_redacted() {
        let mut regen = |_: &str| Ok("You should take 10g ginseng every morning.".to_string());
        let out = run("decoct 9g ephedra daily", ScenarioId::SeasonalWellness, &SessionMode::Normal, &mut regen);
        assert_eq!(out.regeneration_count, 2);
        assert!(out.fallback_used());
        assert!(!out.text.contains("ginseng"));
        assert!(out.text.contains("not provided here"));
    }

    #[test]
    fn regeneration_errors_count_as_attempts() {
        let mut regen = |_: &str| Err("offline".to_string());
        let out = run("You definitely have kidney yang deficiency.", ScenarioId::MildDiscomfort, &SessionMode::Normal, &mut regen);
        assert_eq!(out.regeneration_count, 2);
        assert!(SafetyGuard::default().check(&out.text, &policy(ScenarioId::MildDiscomfort), &SessionMode::Normal).passed);
    }

    #[test]
    fn order_is_citation_advisory_disclaimer() {
        let mode = SessionMode::Safeguard {
            trigger: SafeguardTrigger { kind: SafeguardKind::Pediatric, evidence: "child".into() },
        };
        let g = SafetyGuard::default();
        let p = policy(ScenarioId::TheoryLearning);
        let r = g.check("Qi moves blood.", &p, &mode);
        let out = g.enforce("Qi moves blood.", &p, &mode, &r, &["Outline of TCM Theory".into()], &mut never);
        assert_eq!(
            out.text,
            "Qi moves blood.\n\nSource: Outline of TCM Theory\n\nIf symptoms get worse or do not improve, see a qualified medical professional without delay."
        );
    }

    #[test]
    fn chinese_reply_gets_chinese_templates() {
        let out = run("注意休息，少吃生冷。", ScenarioId::MildDiscomfort, &SessionMode::Normal, &mut never);
        assert!(out.text.ends_with("以下内容仅供参考，不能替代专业诊断或处方。"));
        assert!(out.text.contains("请及时到正规医疗机构就诊"));
    }

    fn arb_mode() -> impl Strategy<Value = SessionMode> {
        prop_oneof![
            Just(SessionMode::Normal),
            Just(SessionMode::ConservativeCompliant),
            Just(SessionMode::Safeguard {
                trigger: SafeguardTrigger { kind: SafeguardKind::ChronicDisease, evidence: "chronic".into() }
            }),
        ]
    }

    fn arb_reply() -> impl Strategy<Value = String> {
        let pieces = prop::sample::select(vec![
            "decoct 9g ephedra", "Take 15 grams of astragalus", "黄芪30克", "逍遥散", "Xiao Yao San",
            "You definitely have", "you are diagnosed with", "确诊", "Your pattern is", "证型为",
            "属于气虚证", "Huangdi Neijing", "Source:", "eat pears", "sleep early", "多喝水", "\n\n",
            " ", "9", "g", "The following content is for reference only", "如症状加重", "。", ".",
        ]);
        prop::collection::vec(pieces, 0..12).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn enforce_reaches_fixpoint(reply in arb_reply(), mode in arb_mode(), s in 0usize..4, regen_ok in any::<bool>()) {
            let g = SafetyGuard::default();
            let p = policy(ScenarioId::ALL[s]);
            let report = g.check(&reply, &p, &mode);
            let mut regen = |_: &str| if regen_ok { Ok("Rest and eat warm food.".to_string()) } else { Ok(reply.clone()) };
            let out = g.enforce(&reply, &p, &mode, &report, &[], &mut regen);
            prop_assert!(g.check(&out.text, &p, &mode).passed, "{:?}", out);
            let again = g.enforce(&out.text, &p, &mode, &g.check(&out.text, &p, &mode), &[], &mut never);
            prop_assert_eq!(again.text, out.text);
        }
    }
}
