use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_termination, plan_inquiry, ConsultError, CotStage, DeclineDetector, DialogueState, EventKind,
    ExtractedFinding, InquiryQuestion, QuestionPool, RuleExtractor, SafeguardDetector, SessionMode, Speaker,
    TerminationReason, Thresholds,
};
use crate::corpus::Corpus;
use crate::gateway::{
    assemble_prompt, ChatMessage, ContextSnippet, Gateway, GatewayError, LlmScenarioClassifier, PersonaProfile,
    PromptBundle, PromptInputs, Purpose, RequestMeta, SystemSection, ToolCall, DEFAULT_CONTEXT_BUDGET,
};
use crate::safety::{ComplianceReport, SafeReply, SafetyGuard};
use crate::scenario::{
    classify, resolve_scenario, CueLexicon, PolicyBook, ScenarioId, ScenarioPolicy, DEFAULT_SWITCH_THRESHOLD,
};
use crate::text::is_mostly_cjk;
use crate::tools::{tongue_findings, ToolContext, ToolError, ToolRegistry};

/// Attachment reference under which a turn's image is offered to tools.
pub const ATTACHMENT_REF: &str = "attachment-1";

/// Tool-call rounds allowed per reply before the model must answer.
const MAX_TOOL_ROUNDS: usize = 2;

/// Prior transcript turns included in reply prompts.
const HISTORY_TURNS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExtractionMode {
    /// Structured-output call through the gateway; rules when the output is
    /// malformed.
    #[default]
    Model,
    /// Cue rules only; no gateway call.
    Rules,
}

/// Everything one consultation step needs. Cheap to clone.
#[derive(Clone)]
pub struct ConsultDeps {
    pub gateway: Gateway,
    pub corpus: Option<Arc<Corpus>>,
    pub tools: Arc<ToolRegistry>,
    pub policies: PolicyBook,
    pub safety: Arc<SafetyGuard>,
    pub pool: Arc<QuestionPool>,
    pub cues: Arc<CueLexicon>,
    pub extractor: Arc<RuleExtractor>,
    pub declines: Arc<DeclineDetector>,
    pub safeguards: Arc<SafeguardDetector>,
    pub persona: PersonaProfile,
    pub thresholds: Thresholds,
    pub switch_threshold: f64,
    pub context_budget: usize,
    pub retrieval_k: usize,
    pub extraction: ExtractionMode,
    /// Ask the model when cue matching is inconclusive.
    pub llm_routing: bool,
}

impl ConsultDeps {
    /// Shipped data files, no corpus, no tools.
    pub fn new(gateway: Gateway) -> Self {
        Self {
            gateway,
            corpus: None,
            tools: Arc::new(ToolRegistry::default()),
            policies: PolicyBook::defaults(),
            safety: Arc::new(SafetyGuard::default()),
            pool: Arc::new(QuestionPool::defaults()),
            cues: Arc::new(CueLexicon::defaults()),
            extractor: Arc::new(RuleExtractor::defaults().clone()),
            declines: Arc::new(DeclineDetector::defaults().clone()),
            safeguards: Arc::new(SafeguardDetector::defaults().clone()),
            persona: PersonaProfile::defaults(),
            thresholds: Thresholds::default(),
            switch_threshold: DEFAULT_SWITCH_THRESHOLD,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            retrieval_k: 3,
            extraction: ExtractionMode::Model,
            llm_routing: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct UserInput {
    pub text: String,
    pub image: Option<Vec<u8>>,
}

impl UserInput {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), image: None }
    }

    pub fn with_image(mut self, bytes: Vec<u8>) -> Self {
        self.image = Some(bytes);
        self
    }
}

/// An unchecked reply plus what safety enforcement needs to repair it.
#[derive(Debug, Clone)]
pub struct ReplyDraft {
    pub text: String,
    pub scenario: ScenarioId,
    pub stage: CotStage,
    pub questions: Vec<InquiryQuestion>,
    /// Titles of the documents retrieved for this reply.
    pub sources: Vec<String>,
    /// Prompt that produced a model-written reply; `None` for composed
    /// question lists.
    pub bundle: Option<PromptBundle>,
}

/// Result of one transactional step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: DialogueState,
    /// Events produced by the step, already folded into `state`.
    pub events: Vec<EventKind>,
    pub reply: SafeReply,
    /// Compliance report of the draft before enforcement.
    pub draft_report: ComplianceReport,
    pub questions: Vec<InquiryQuestion>,
}

/// Builds the inquiry reply: a short lead-in and a numbered list.
pub fn compose_questions(questions: &[InquiryQuestion], chinese: bool) -> String {
    let lead = if chinese {
        "为了更好地了解您的情况，请回答以下问题："
    } else {
        "To understand your situation better, could you tell me:"
    };
    let mut out = lead.to_string();
    for (i, q) in questions.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, q.text.pick(chinese)));
    }
    out
}

fn gateway_error(e: GatewayError) -> ConsultError {
    match e {
        GatewayError::MissingScript { fingerprint, .. } => ConsultError::MissingScript(fingerprint),
        other => ConsultError::GatewayUnavailable(other.to_string()),
    }
}

/// Working copy of a session during a step. Events are folded as they are
/// produced, so later decisions see earlier ones.
struct Tx {
    state: DialogueState,
    events: Vec<EventKind>,
}

impl Tx {
    fn emit(&mut self, event: EventKind) -> Result<(), ConsultError> {
        self.state.apply(&event).map_err(ConsultError::Invariant)?;
        self.events.push(event);
        Ok(())
    }
}

pub struct ConsultEngine {
    deps: ConsultDeps,
}

impl ConsultEngine {
    pub fn new(deps: ConsultDeps) -> Self {
        Self { deps }
    }

    pub fn deps(&self) -> &ConsultDeps {
        &self.deps
    }

    pub fn policy(&self, scenario: ScenarioId) -> ScenarioPolicy {
        self.deps.policies.policy_for(scenario)
    }

    /// Routes, advances and enforces one user turn. On error nothing is
    /// returned and `state` is untouched.
    pub fn step(&self, state: &DialogueState, input: &UserInput) -> Result<StepOutcome, ConsultError> {
        if input.text.trim().is_empty() && input.image.is_none() {
            return Err(ConsultError::EmptyMessage);
        }
        let mut tx = Tx { state: state.clone(), events: Vec::new() };
        let turn = tx.state.user_turns + 1;
        tx.emit(EventKind::UserTurn {
            turn,
            text: input.text.clone(),
            attachment_sha256: input.image.as_ref().map(|b| crate::gateway::hex(&Sha256::digest(b))),
        })?;
        self.route(&mut tx, &input.text)?;
        let draft = self.advance_tx(&mut tx, input)?;
        let (reply, draft_report) = self.finalize(&mut tx, &draft)?;
        Ok(StepOutcome {
            state: tx.state,
            events: tx.events,
            reply,
            draft_report,
            questions: draft.questions,
        })
    }

    fn route(&self, tx: &mut Tx, text: &str) -> Result<(), ConsultError> {
        let d = &self.deps;
        let history: Vec<String> = tx
            .state
            .transcript
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| t.text.clone())
            .rev()
            .skip(1)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let classifier = LlmScenarioClassifier { gateway: &d.gateway };
        let fallback: Option<&dyn crate::scenario::ScenarioFallback> =
            if d.llm_routing { Some(&classifier) } else { None };
        let decision = classify(text, &history, &d.cues, fallback);
        // While questions are open the turn is taken as an answer and the
        // scenario is kept.
        let scenario = match tx.state.scenario {
            Some(cur) if !tx.state.pending_questions.is_empty() => cur,
            cur => resolve_scenario(cur, &decision, d.switch_threshold),
        };
        tx.emit(EventKind::ScenarioRouted { scenario, decision })
    }

    /// The consultation step proper, on a state whose scenario is routed
    /// and whose latest user turn is already recorded.
    fn advance_tx(&self, tx: &mut Tx, input: &UserInput) -> Result<ReplyDraft, ConsultError> {
        let d = &self.deps;
        let scenario = tx.state.scenario.ok_or(ConsultError::ScenarioNotRouted)?;
        let policy = self.policy(scenario);
        let turn = tx.state.user_turns;
        let text = input.text.as_str();
        let chinese = is_mostly_cjk(text);

        let mut findings: Vec<ExtractedFinding> = Vec::new();
        let mut tool_context: Vec<ContextSnippet> = Vec::new();
        let mut ctx = ToolContext::default();
        if let Some(bytes) = &input.image {
            ctx.attachments.insert(ATTACHMENT_REF.to_string(), bytes.clone());
            let call = ToolCall {
                id: format!("turn{turn}-image"),
                name: "classify_tongue".into(),
                arguments: serde_json::json!({ "image_ref": ATTACHMENT_REF }),
            };
            let result = self.run_tool(tx, &call, &ctx)?;
            if let Some(analysis) = result.tongue() {
                findings.extend(tongue_findings(&analysis));
            }
            tool_context.push(tool_snippet(&call.name, &result.payload));
        }

        let inquiry_live =
            policy.runs_inquiry && tx.state.stage == CotStage::SymptomRecognition && tx.state.termination.is_none();
        if inquiry_live && !text.trim().is_empty() {
            findings.extend(self.extract(text, scenario)?);
        }
        if !findings.is_empty() {
            tx.emit(EventKind::FindingsExtracted { turn, findings: findings.clone() })?;
        }

        if tx.state.mode == SessionMode::Normal {
            if let Some(trigger) = d.safeguards.detect(text, &findings) {
                tx.emit(EventKind::ModeChanged { mode: SessionMode::Safeguard { trigger } })?;
            }
        }

        if inquiry_live {
            if d.declines.is_decline(text) && !tx.state.user_declined {
                tx.emit(EventKind::UserDeclined { turn })?;
            }
            let coverage = tx.state.coverage();
            if tx.state.baseline_coverage.is_none() {
                tx.emit(EventKind::BaselineRecorded { coverage })?;
            } else {
                let round = tx.state.inquiry_rounds + 1;
                tx.emit(EventKind::InquiryRoundCompleted { round, coverage })?;
            }
            let mut reason = check_termination(&tx.state, &d.thresholds);
            if reason.is_none() {
                let remaining = d.pool.without(&tx.state.asked_questions);
                let budget = policy.question_budget_per_round as usize;
                let questions = match plan_inquiry(&tx.state.ledger, &remaining, budget) {
                    Ok(q) => q,
                    Err(ConsultError::EmptyPool) => Vec::new(),
                    Err(e) => return Err(e),
                };
                if questions.is_empty() {
                    tracing::info!(session = %tx.state.session_id, "question pool exhausted; ending inquiry");
                    reason = Some(TerminationReason::DiminishingGain);
                } else {
                    tx.emit(EventKind::QuestionsAsked { questions: questions.iter().map(|q| q.id).collect() })?;
                    return Ok(ReplyDraft {
                        text: compose_questions(&questions, chinese),
                        scenario,
                        stage: tx.state.stage,
                        questions,
                        sources: Vec::new(),
                        bundle: None,
                    });
                }
            }
            let reason = reason.expect("set above");
            tx.emit(EventKind::TerminationReached { reason })?;
            if matches!(reason, TerminationReason::UserDeclined | TerminationReason::DiminishingGain)
                && tx.state.mode == SessionMode::Normal
            {
                tx.emit(EventKind::ModeChanged { mode: SessionMode::ConservativeCompliant })?;
            }
            let next = if tx.state.mode == SessionMode::ConservativeCompliant {
                CotStage::LifestyleRecommendation
            } else {
                CotStage::PatternDifferentiation
            };
            tx.emit(EventKind::StageAdvanced { stage: next })?;
        } else if policy.runs_inquiry && tx.state.termination.is_some() {
            if let Some(next) = tx.state.stage.next() {
                tx.emit(EventKind::StageAdvanced { stage: next })?;
            }
        }

        let direct_answer = !policy.runs_inquiry;
        self.model_reply(tx, &policy, text, direct_answer, tool_context, &ctx)
    }

    fn extract(&self, text: &str, scenario: ScenarioId) -> Result<Vec<ExtractedFinding>, ConsultError> {
        match self.deps.extraction {
            ExtractionMode::Rules => Ok(self.deps.extractor.extract(text)),
            ExtractionMode::Model => match self.deps.gateway.extract_structured(text, Some(scenario)) {
                Ok(f) => Ok(f),
                Err(GatewayError::MalformedStructuredOutput { raw }) => {
                    tracing::warn!(raw = %raw, "malformed extraction output; using cue rules");
                    Ok(self.deps.extractor.extract(text))
                }
                Err(e) => Err(gateway_error(e)),
            },
        }
    }

    fn run_tool(
        &self,
        tx: &mut Tx,
        call: &ToolCall,
        ctx: &ToolContext,
    ) -> Result<crate::tools::ToolResult, ConsultError> {
        let result = match self.deps.tools.dispatch(call, ctx) {
            Ok(r) => r,
            Err(e) => {
                let e = match e {
                    ToolError::UnknownTool(name) if name == "classify_tongue" => ToolError::NotConfigured { tool: name },
                    other => other,
                };
                crate::tools::ToolResult {
                    call_id: call.id.clone(),
                    tool: call.name.clone(),
                    ok: false,
                    payload: serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}}),
                }
            }
        };
        tx.emit(EventKind::ToolInvoked {
            tool: call.name.clone(),
            args: call.arguments.clone(),
            result: result.payload.clone(),
        })?;
        Ok(result)
    }

    fn model_reply(
        &self,
        tx: &mut Tx,
        policy: &ScenarioPolicy,
        text: &str,
        direct_answer: bool,
        mut extra_context: Vec<ContextSnippet>,
        ctx: &ToolContext,
    ) -> Result<ReplyDraft, ConsultError> {
        let d = &self.deps;
        let hits = match &d.corpus {
            Some(c) if !text.trim().is_empty() => c.retrieve_routed(&policy.knowledge_tags, text, d.retrieval_k),
            _ => Vec::new(),
        };
        let mut sources: Vec<String> = Vec::new();
        for h in &hits {
            if !sources.contains(&h.title) {
                sources.push(h.title.clone());
            }
        }
        let mut context: Vec<ContextSnippet> = hits.iter().map(ContextSnippet::from).collect();
        context.append(&mut extra_context);

        let prior = &tx.state.transcript[..tx.state.transcript.len().saturating_sub(1)];
        let history: Vec<ChatMessage> = prior
            .iter()
            .skip(prior.len().saturating_sub(HISTORY_TURNS))
            .map(|t| match t.speaker {
                Speaker::User => ChatMessage::user(t.text.clone()),
                Speaker::Assistant => ChatMessage::assistant(t.text.clone()),
            })
            .collect();
        let tool_schemas = d.tools.tool_schemas();
        let user_turn = if text.trim().is_empty() { "(image attached)" } else { text };
        let stage = tx.state.stage;
        let meta = RequestMeta::new(Purpose::Reply).with_scenario(Some(policy.scenario)).with_stage(stage);

        let mut tool_rounds = 0;
        loop {
            let bundle = assemble_prompt(&PromptInputs {
                persona: &d.persona,
                policy,
                stage,
                mode: &tx.state.mode,
                direct_answer,
                context: &context,
                history: &history,
                user_turn,
                tool_schemas: if tool_rounds < MAX_TOOL_ROUNDS { &tool_schemas } else { &[] },
                context_budget: d.context_budget,
            });
            let resp = d.gateway.complete(&bundle, meta.clone()).map_err(gateway_error)?;
            if resp.tool_calls.is_empty() || tool_rounds >= MAX_TOOL_ROUNDS {
                let text = if resp.text.trim().is_empty() {
                    d.safety.lexicon().refusal().pick(is_mostly_cjk(user_turn)).to_string()
                } else {
                    resp.text
                };
                return Ok(ReplyDraft {
                    text,
                    scenario: policy.scenario,
                    stage,
                    questions: Vec::new(),
                    sources,
                    bundle: Some(bundle),
                });
            }
            for call in &resp.tool_calls {
                let result = self.run_tool(tx, call, ctx)?;
                if let Some(analysis) = result.tongue() {
                    let findings = tongue_findings(&analysis);
                    if !findings.is_empty() && tx.state.stage == CotStage::SymptomRecognition {
                        let turn = tx.state.user_turns;
                        tx.emit(EventKind::FindingsExtracted { turn, findings })?;
                    }
                }
                context.push(tool_snippet(&call.name, &result.payload));
            }
            tool_rounds += 1;
        }
    }

    /// Checks and repairs the draft, then records the compliance outcome
    /// and the emitted reply.
    fn finalize(&self, tx: &mut Tx, draft: &ReplyDraft) -> Result<(SafeReply, ComplianceReport), ConsultError> {
        let d = &self.deps;
        let policy = self.policy(draft.scenario);
        let mode = tx.state.mode.clone();
        let report = d.safety.check(&draft.text, &policy, &mode);
        let meta = RequestMeta::new(Purpose::Regeneration)
            .with_scenario(Some(draft.scenario))
            .with_stage(draft.stage);
        let mut regenerate = |correction: &str| -> Result<String, String> {
            let Some(bundle) = &draft.bundle else {
                return Err("composed reply cannot be regenerated".into());
            };
            let mut b = bundle.clone();
            b.tool_schemas.clear();
            b.system_sections.push(SystemSection { name: "correction".into(), text: correction.to_string() });
            let resp = d.gateway.complete(&b, meta.clone()).map_err(|e| e.to_string())?;
            Ok(resp.text)
        };
        let reply = d.safety.enforce(&draft.text, &policy, &mode, &report, &draft.sources, &mut regenerate);
        let final_report = d.safety.check(&reply.text, &policy, &mode);
        tx.emit(EventKind::ComplianceChecked {
            violations: crate::safety::kind_names(&report),
            regenerations: reply.regeneration_count,
            fallback_used: reply.fallback_used() || !final_report.passed,
        })?;
        let turn = tx.state.user_turns;
        tx.emit(EventKind::ReplyEmitted { turn, text: reply.text.clone() })?;
        Ok((reply, report))
    }
}

fn tool_snippet(tool: &str, payload: &serde_json::Value) -> ContextSnippet {
    ContextSnippet {
        source: format!("Tool result: {tool}"),
        text: payload.to_string(),
        score: f64::MAX,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consult::{DiagnosticElement, Fraction};
    use crate::gateway::{Script, ScriptRule, ScriptedBackend, ScriptedReply};

    fn engine(rules: Vec<ScriptRule>, fallback: &str) -> ConsultEngine {
        let script = Script { rules, fallback: Some(ScriptedReply::text(fallback)), ..Default::default() };
        let backend = Arc::new(ScriptedBackend::new(script));
        let mut deps = ConsultDeps::new(Gateway::scripted(backend));
        deps.extraction = ExtractionMode::Rules;
        deps.llm_routing = false;
        ConsultEngine::new(deps)
    }

    fn fresh() -> DialogueState {
        let mut s = DialogueState::new("s1".into(), None);
        s.apply(&EventKind::SessionCreated { session_id: "s1".into(), scenario_hint: None }).unwrap();
        s
    }

    #[test]
    fn sparse_first_turn_asks_questions() {
        let e = engine(vec![], "A general reply.");
        let out = e.step(&fresh(), &UserInput::text("I have had insomnia and poor appetite for a week")).unwrap();
        assert_eq!(out.state.scenario, Some(ScenarioId::MildDiscomfort));
        assert_eq!(out.state.stage, CotStage::SymptomRecognition);
        assert!((1..=5).contains(&out.questions.len()));
        assert_eq!(out.state.pending_questions.len(), out.questions.len());
        assert!(out.reply.text.contains("cannot replace professional diagnosis or prescription."));
        assert_eq!(out.state.transcript.len(), 2);
    }

    #[test]
    fn decline_enters_conservative_mode() {
        let e = engine(vec![], "Rest well and keep a regular schedule.");
        let s1 = e.step(&fresh(), &UserInput::text("I have had a headache and feel cold")).unwrap().state;
        let out = e.step(&s1, &UserInput::text("I don't want to answer any more questions")).unwrap();
        assert_eq!(out.state.mode, SessionMode::ConservativeCompliant);
        assert_eq!(out.state.stage, CotStage::LifestyleRecommendation);
        assert_eq!(out.state.termination, Some(TerminationReason::UserDeclined));
    }

    #[test]
    fn failed_step_leaves_state_untouched() {
        let script = Script::default();
        let backend = Arc::new(ScriptedBackend::new(script));
        let mut deps = ConsultDeps::new(Gateway::scripted(backend));
        deps.llm_routing = false;
        let e = ConsultEngine::new(deps);
        let s = fresh();
        let err = e.step(&s, &UserInput::text("I have had insomnia for a week")).unwrap_err();
        assert!(matches!(err, ConsultError::MissingScript(_)));
        assert_eq!(s, fresh());
    }

    #[test]
    fn events_reproduce_state() {
        let e = engine(vec![ScriptRule::purpose(Purpose::Reply, ScriptedReply::text("Consider warming foods."))], "x");
        let mut s = fresh();
        let mut log = vec![EventKind::SessionCreated { session_id: "s1".into(), scenario_hint: None }];
        for msg in ["I feel cold and tired with poor appetite", "my stool is loose and I sweat easily", "no"] {
            let out = e.step(&s, &UserInput::text(msg)).unwrap();
            log.extend(out.events.clone());
            s = out.state;
        }
        assert_eq!(DialogueState::from_events(&log).unwrap(), s);
        assert!(s.coverage() >= Fraction::new(0, 1));
        let _ = DiagnosticElement::ALL;
    }
}
