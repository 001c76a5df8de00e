//! Acceptance suite. Prints one PASS/FAIL line per criterion on stderr and
//! exits non-zero if any criterion fails. Runs fully offline: the language
//! model is the scripted provider and the external tools are loopback stubs.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcm_consult::config::AppConfig;
use tcm_consult::consult::{
    check_termination, greedy_plan, plan_inquiry, BilingualText, DiagnosticElement, DialogueState, EventKind,
    ExtractedFinding, FindingSource, InquiryQuestion, QuestionId, QuestionPool, SessionMode, TerminationReason,
    Thresholds,
};
use tcm_consult::corpus::{ingest_document, is_separator_line, merge_documents, separator_line, CategoryTag, StripPatterns};
use tcm_consult::eval::{
    load_benchmark, render_comparison, score, Choice, EvalItem, EvalRun, EvalRunner, EvalTask, Prediction,
    ReferenceFigures, OPTION_LETTERS,
};
use tcm_consult::gateway::{Gateway, Purpose, RequestMeta, Script, ScriptedBackend, ScriptedReply};
use tcm_consult::safety::SafetyGuard;
use tcm_consult::scenario::{PolicyBook, ScenarioId};

type Fraction = Ratio<i64>;

const DISCLAIMER_PRESCRIPTION_EN: &str =
    "The following content is for reference only and cannot replace professional diagnosis or prescription.";
const DISCLAIMER_TREATMENT_EN: &str =
    "The following content is for reference only and cannot replace professional diagnosis or treatment.";
const DISCLAIMER_PRESCRIPTION_ZH: &str = "以下内容仅供参考，不能替代专业诊断或处方。";
const DISCLAIMER_TREATMENT_ZH: &str = "以下内容仅供参考，不能替代专业诊断或治疗。";

struct Outcome {
    detail: String,
}

type Check = fn() -> Result<Outcome, String>;

fn ok(detail: impl Into<String>) -> Result<Outcome, String> {
    Ok(Outcome { detail: detail.into() })
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Inquiry loop simulation at state level. Each step applies the same events
// the engine emits for an inquiry turn.

#[derive(Debug, Clone, Copy)]
enum Answer {
    Reveal(usize),
    Decline,
}

struct Sim<'a> {
    pool: &'a [InquiryQuestion],
    budget: usize,
    th: Thresholds,
    /// Pool that must never run dry; exhaustion then counts as a failure.
    non_exhausting: bool,
}

#[derive(Default)]
struct SimStats {
    runs: u64,
    max_rounds: u32,
    by_reason: BTreeMap<String, u64>,
    exhausted: u64,
}

fn finding(e: DiagnosticElement) -> ExtractedFinding {
    ExtractedFinding { element: e, finding: format!("{} observed", e.as_str()), confidence: 1.0, source: FindingSource::Rules }
}

fn known_state(mask: u8) -> DialogueState {
    let mut s = DialogueState::new("sim".into(), Some(ScenarioId::MildDiscomfort));
    let findings: Vec<_> =
        DiagnosticElement::ALL.iter().filter(|e| mask & e.bit() != 0).map(|&e| finding(e)).collect();
    if !findings.is_empty() {
        s.apply(&EventKind::FindingsExtracted { turn: 1, findings }).unwrap();
    }
    s
}

/// Independent stop rule over known counts (out of six) with the default
/// thresholds: more than 4/5 known means at least five; a two-round gain
/// below 1/10 of six elements means no gain at all.
fn expected_reason(declined: bool, counts: &[usize]) -> Option<TerminationReason> {
    let t = counts.len() - 1;
    if declined {
        Some(TerminationReason::UserDeclined)
    } else if counts[t] * 5 > 4 * 6 {
        Some(TerminationReason::SufficientCoverage)
    } else if t >= 2 && (counts[t] - counts[t - 2]) * 10 < 6 {
        Some(TerminationReason::DiminishingGain)
    } else {
        None
    }
}

impl Sim<'_> {
    /// Explores every answer sequence from `state`, whose pending questions
    /// are `asked`. `counts` holds known counts for the baseline and each
    /// completed round.
    fn explore(&self, state: &DialogueState, counts: &mut Vec<usize>, stats: &mut SimStats) -> Result<(), String> {
        let answers = [Answer::Reveal(0), Answer::Reveal(1), Answer::Reveal(2), Answer::Decline];
        for answer in answers {
            let mut s = state.clone();
            let mut revealed = 0;
            match answer {
                Answer::Decline => s.apply(&EventKind::UserDeclined { turn: s.inquiry_rounds + 2 }).unwrap(),
                Answer::Reveal(n) => {
                    let targets: u8 = s
                        .pending_questions
                        .iter()
                        .map(|id| self.pool.iter().find(|q| q.id == *id).expect("asked from pool").mask())
                        .fold(0, |a, b| a | b);
                    let fresh: Vec<_> = DiagnosticElement::ALL
                        .iter()
                        .filter(|e| targets & e.bit() != 0 && !s.ledger.is_known(**e))
                        .take(n)
                        .map(|&e| finding(e))
                        .collect();
                    if fresh.len() < n {
                        continue;
                    }
                    revealed = fresh.len();
                    if !fresh.is_empty() {
                        s.apply(&EventKind::FindingsExtracted { turn: s.inquiry_rounds + 2, findings: fresh }).unwrap();
                    }
                }
            }
            let round = s.inquiry_rounds + 1;
            s.apply(&EventKind::InquiryRoundCompleted { round, coverage: s.coverage() }).unwrap();
            counts.push(counts.last().unwrap() + revealed);
            self.step(s, counts, matches!(answer, Answer::Decline), stats)?;
            counts.pop();
        }
        Ok(())
    }

    fn step(
        &self,
        mut s: DialogueState,
        counts: &mut Vec<usize>,
        declined: bool,
        stats: &mut SimStats,
    ) -> Result<(), String> {
        if s.inquiry_rounds > 14 {
            return Err(format!("no termination after {} rounds (counts {counts:?})", s.inquiry_rounds));
        }
        let got = check_termination(&s, &self.th);
        let want = expected_reason(declined, counts);
        ensure(got == want, || format!("rounds {counts:?} declined={declined}: got {got:?}, want {want:?}"))?;
        let reason = match got {
            Some(r) => Some(r),
            None => {
                let remaining = QuestionPool::new(self.pool.to_vec()).unwrap().without(&s.asked_questions);
                let planned = plan_inquiry(&s.ledger, &remaining, self.budget).unwrap_or_default();
                if planned.is_empty() {
                    stats.exhausted += 1;
                    ensure(!self.non_exhausting, || format!("pool exhausted at {counts:?}"))?;
                    Some(TerminationReason::DiminishingGain)
                } else {
                    s.apply(&EventKind::QuestionsAsked { questions: planned.iter().map(|q| q.id).collect() })
                        .unwrap();
                    None
                }
            }
        };
        match reason {
            Some(r) => {
                s.apply(&EventKind::TerminationReached { reason: r }).unwrap();
                stats.runs += 1;
                stats.max_rounds = stats.max_rounds.max(s.inquiry_rounds);
                *stats.by_reason.entry(format!("{r:?}")).or_default() += 1;
                ensure(s.inquiry_rounds <= 14, || format!("terminated after {} rounds", s.inquiry_rounds))
            }
            None => self.explore(&s, counts, stats),
        }
    }

    fn run_all(&self, stats: &mut SimStats) -> Result<(), String> {
        for mask in 0u8..64 {
            let mut s = known_state(mask);
            s.apply(&EventKind::BaselineRecorded { coverage: s.coverage() }).unwrap();
            let mut counts = vec![mask.count_ones() as usize];
            self.step(s, &mut counts, false, stats)?;
        }
        Ok(())
    }
}

fn question(id: u32, mask: u8) -> InquiryQuestion {
    InquiryQuestion {
        id: QuestionId(id),
        text: BilingualText { en: format!("question {id}"), zh: format!("问题{id}") },
        targets: DiagnosticElement::ALL.iter().copied().filter(|e| mask & e.bit() != 0).collect(),
    }
}

fn large_pool() -> Vec<InquiryQuestion> {
    let masks: Vec<u8> = (1u8..64).filter(|m| m.count_ones() <= 3).collect();
    (0..3).flat_map(|_| masks.iter().copied()).enumerate().map(|(i, m)| question(i as u32 + 1, m)).collect()
}

fn history_state(baseline: Fraction, history: &[Fraction], declined: bool) -> DialogueState {
    let mut s = DialogueState::new("c".into(), None);
    s.baseline_coverage = Some(baseline);
    s.coverage_history = history.to_vec();
    s.inquiry_rounds = history.len() as u32;
    s.user_declined = declined;
    s
}

fn termination_exhaustiveness() -> Result<Outcome, String> {
    let th = Thresholds::default();
    let shipped = QuestionPool::defaults().questions().to_vec();
    let large = large_pool();
    let mut summary = Vec::new();
    for (name, pool, non_exhausting) in [("shipped", &shipped, false), ("large", &large, true)] {
        let mut stats = SimStats::default();
        Sim { pool, budget: 3, th, non_exhausting }.run_all(&mut stats)?;
        summary.push(format!(
            "{name} pool: {} runs, max {} rounds, {:?}, {} exhausted",
            stats.runs, stats.max_rounds, stats.by_reason, stats.exhausted
        ));
    }

    let f = |n, d| Fraction::new(n, d);
    let overlap = [
        // decline wins over sufficient coverage and zero gain
        (history_state(f(5, 6), &[f(5, 6), f(5, 6)], true), TerminationReason::UserDeclined),
        (history_state(f(0, 1), &[f(1, 6)], true), TerminationReason::UserDeclined),
        // sufficient coverage wins over zero gain
        (history_state(f(5, 6), &[f(5, 6), f(5, 6)], false), TerminationReason::SufficientCoverage),
        (history_state(f(1, 1), &[f(1, 1), f(1, 1), f(1, 1)], false), TerminationReason::SufficientCoverage),
        // only the gain condition holds
        (history_state(f(2, 6), &[f(2, 6), f(2, 6)], false), TerminationReason::DiminishingGain),
    ];
    for (state, want) in &overlap {
        let got = check_termination(state, &th);
        ensure(got == Some(*want), || format!("overlap case {:?}: got {got:?}, want {want:?}", state.coverage_history))?;
    }
    summary.push(format!("{} overlap cases", overlap.len()));
    ok(summary.join("; "))
}

fn threshold_exactness() -> Result<Outcome, String> {
    let th = Thresholds::default();
    ensure(th == Thresholds::from_decimals(0.8, 0.1).unwrap(), || "0.8/0.1 do not parse to 4/5 and 1/10".into())?;
    let f = |n, d| Fraction::new(n, d);
    let cases: [(&str, DialogueState, Option<TerminationReason>); 6] = [
        ("5/6 known", history_state(f(0, 1), &[f(5, 6)], false), Some(TerminationReason::SufficientCoverage)),
        ("4/6 known", history_state(f(0, 1), &[f(4, 6)], false), None),
        ("exactly 4/5", history_state(f(0, 1), &[f(4, 5)], false), None),
        ("gain exactly 1/10", history_state(f(0, 1), &[f(1, 20), f(1, 10)], false), None),
        ("gain 1/10 at round 3", history_state(f(0, 1), &[f(1, 5), f(1, 4), f(3, 10)], false), None),
        ("gain just under 1/10", history_state(f(0, 1), &[f(1, 20), f(99, 1000)], false), Some(TerminationReason::DiminishingGain)),
    ];
    for (name, state, want) in &cases {
        let got = check_termination(state, &th);
        ensure(got == *want, || format!("{name}: got {got:?}, want {want:?}"))?;
    }
    // the same comparisons through a real ledger
    let five = known_state(0b01_1111);
    ensure(five.coverage() > th.coverage, || "ledger with five known is not above 4/5".into())?;
    let four = known_state(0b00_1111);
    ensure(four.coverage() <= th.coverage, || "ledger with four known is above 4/5".into())?;
    ok(format!("{} exact cases", cases.len()))
}

fn planner_optimality() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut greedy_short = 0;
    for case in 0..200 {
        let n = rng.gen_range(1..=10);
        let pool: Vec<InquiryQuestion> = (0..n)
            .map(|i| {
                let size = rng.gen_range(1..=3);
                let mut mask = 0u8;
                while mask.count_ones() < size {
                    mask |= 1 << rng.gen_range(0..6);
                }
                question(i as u32 + 1, mask)
            })
            .collect();
        let budget = rng.gen_range(1..=5);
        let known_mask: u8 = rng.gen_range(0..64);
        let state = known_state(known_mask);
        let unknown = !known_mask & 0b11_1111;

        let mut brute = 0u32;
        for subset in 0u32..(1 << n) {
            if subset.count_ones() as usize > budget {
                continue;
            }
            let cov = (0..n).filter(|i| subset & (1 << i) != 0).fold(0u8, |m, i| m | pool[i].mask()) & unknown;
            brute = brute.max(cov.count_ones());
        }

        let plan = plan_inquiry(&state.ledger, &pool, budget).map_err(|e| format!("case {case}: {e}"))?;
        let covered = plan.iter().fold(0u8, |m, q| m | q.mask()) & unknown;
        ensure(plan.len() <= budget, || format!("case {case}: {} questions over budget {budget}", plan.len()))?;
        ensure(covered.count_ones() == brute, || {
            format!("case {case}: planner covers {} of {brute} (pool {:?})", covered.count_ones(), pool.iter().map(|q| q.mask()).collect::<Vec<_>>())
        })?;
        ensure(plan.iter().all(|q| q.mask() & unknown != 0), || format!("case {case}: asked about known elements"))?;

        let greedy = greedy_plan(unknown, &pool, budget);
        let gcov = greedy.iter().fold(0u8, |m, &i| m | pool[i].mask()) & unknown;
        if gcov.count_ones() < brute {
            greedy_short += 1;
        }
    }
    ok(format!("200 pools optimal; plain greedy alone fell short on {greedy_short}"))
}

// ---------------------------------------------------------------------------
// Safety

const CLEAN: &[&str] = &[
    "Keep a regular sleep schedule and avoid screens before bed.",
    "Warm, lightly cooked meals are easier on digestion.",
    "Gentle stretching in the morning can help with stiffness.",
    "保持规律作息，饮食宜清淡温热。",
    "Drink warm water through the day and rest when tired.",
];

const VIOLATING: &[&str] = &[
    "Take 15 g of Huang Qi daily.",
    "You definitely have spleen qi deficiency.",
    "Si Jun Zi Tang will fix this.",
    "Boil 10 g of Dang Gui with 6 g of Gan Cao twice a day.",
    "You are diagnosed with liver qi stagnation.",
    "服用黄芪15克，每日两次。",
    "Try Xiao Yao San for a month.",
];

const EXTRAS: &[&str] = &[
    "Source: Huangdi Neijing.",
    DISCLAIMER_PRESCRIPTION_EN,
    DISCLAIMER_TREATMENT_EN,
    "If symptoms get worse or do not improve, see a qualified medical professional without delay.",
    "",
];

fn modes() -> Vec<SessionMode> {
    vec![
        SessionMode::Normal,
        SessionMode::ConservativeCompliant,
    ]
}

struct SafetyCase {
    reply: String,
    scenario: ScenarioId,
    mode: SessionMode,
    regen: u8,
}

fn run_safety_case(guard: &SafetyGuard, book: &PolicyBook, c: &SafetyCase) -> Result<(), String> {
    let policy = book.policy_for(c.scenario);
    let report = guard.check(&c.reply, &policy, &c.mode);
    let clean = "Rest well and keep warm.".to_string();
    let stubborn = c.reply.clone();
    let mut regen = |_: &str| match c.regen {
        0 => Ok(clean.clone()),
        1 => Ok(stubborn.clone()),
        _ => Err("provider down".to_string()),
    };
    let out = guard.enforce(&c.reply, &policy, &c.mode, &report, &["Huangdi Neijing".to_string()], &mut regen);
    let after = guard.check(&out.text, &policy, &c.mode);
    ensure(after.passed, || format!("{:?}/{:?}: {:?} still violates {:?}", c.scenario, c.mode, out.text, after.kinds()))?;
    let mut no_regen = |_: &str| Err("unexpected regeneration".to_string());
    let again = guard.enforce(&out.text, &policy, &c.mode, &after, &[], &mut no_regen);
    ensure(again.text.as_bytes() == out.text.as_bytes() && again.applied_fixes.is_empty(), || {
        format!("enforce not idempotent on {:?}", out.text)
    })?;
    if report.passed {
        ensure(out.text.as_bytes() == c.reply.as_bytes(), || format!("compliant reply altered: {:?}", c.reply))?;
    }
    Ok(())
}

fn seeded_safety_corpus() -> Vec<SafetyCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let modes = modes();
    (0..50)
        .map(|i| {
            let mut parts: Vec<&str> = Vec::new();
            for _ in 0..rng.gen_range(1..=3) {
                parts.push(CLEAN[rng.gen_range(0..CLEAN.len())]);
            }
            // every case carries at least one violation or is missing a template
            if i % 5 != 4 {
                let at = rng.gen_range(0..=parts.len());
                parts.insert(at, VIOLATING[rng.gen_range(0..VIOLATING.len())]);
            }
            if rng.gen_bool(0.3) {
                parts.push(EXTRAS[rng.gen_range(0..EXTRAS.len())]);
            }
            SafetyCase {
                reply: parts.join(" "),
                scenario: ScenarioId::ALL[i % 4],
                mode: modes[rng.gen_range(0..modes.len())].clone(),
                regen: rng.gen_range(0..3),
            }
        })
        .collect()
}

fn expected_disclaimers(s: ScenarioId) -> Option<[&'static str; 2]> {
    match s {
        ScenarioId::MildDiscomfort | ScenarioId::SeasonalWellness => {
            Some([DISCLAIMER_PRESCRIPTION_EN, DISCLAIMER_PRESCRIPTION_ZH])
        }
        ScenarioId::ConstitutionTongue => Some([DISCLAIMER_TREATMENT_EN, DISCLAIMER_TREATMENT_ZH]),
        ScenarioId::TheoryLearning => None,
    }
}

fn safety_fixpoint() -> Result<Outcome, String> {
    let guard = SafetyGuard::default();
    let book = PolicyBook::defaults();
    let corpus = seeded_safety_corpus();
    let violating = corpus.iter().filter(|c| !guard.check(&c.reply, &book.policy_for(c.scenario), &c.mode).passed).count();
    for c in &corpus {
        run_safety_case(&guard, &book, c)?;
    }

    let pick = |set: &'static [&'static str]| prop::sample::select(set).prop_map(str::to_string);
    let fragment = prop_oneof![pick(CLEAN), pick(VIOLATING), pick(EXTRAS), "[a-zA-Z ,.]{0,40}"];
    let strategy = (
        prop::collection::vec(fragment, 1..6),
        0usize..4,
        0usize..2,
        0u8..3,
    );
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    let modes = modes();
    runner
        .run(&strategy, |(parts, s, m, regen)| {
            let case = SafetyCase { reply: parts.join(" "), scenario: ScenarioId::ALL[s], mode: modes[m].clone(), regen };
            run_safety_case(&guard, &book, &case).map_err(TestCaseError::fail)
        })
        .map_err(|e| format!("property replies: {e}"))?;

    // disclaimers on every reply emitted by the full pipeline
    let h = common::harness();
    let mut checked = 0;
    for (f, id) in common::run_fixture_sessions(&h) {
        let mut scenario = None;
        for ev in h.service.events(&id).map_err(|e| e.to_string())? {
            match ev.event {
                EventKind::ScenarioRouted { scenario: s, .. } => scenario = Some(s),
                EventKind::ReplyEmitted { text, turn } => {
                    let s = scenario.ok_or_else(|| format!("{}: reply before routing", f.name))?;
                    if let Some(variants) = expected_disclaimers(s) {
                        checked += 1;
                        ensure(variants.iter().any(|d| text.contains(d)), || {
                            format!("{} turn {turn} ({s:?}): disclaimer missing from {text:?}", f.name)
                        })?;
                    }
                }
                _ => {}
            }
        }
    }
    ok(format!(
        "50 seeded cases ({violating} violating) + 500 generated replies pass after enforce; {checked} pipeline replies carry their disclaimer"
    ))
}

// ---------------------------------------------------------------------------
// Eval

fn bench() -> Vec<EvalItem> {
    load_benchmark(&common::fixtures().join("bench_40.jsonl"), None).unwrap()
}

fn eval_oracle() -> Result<Outcome, String> {
    let items = bench();
    ensure(items.len() == 40, || format!("fixture has {} items", items.len()))?;

    let backend = Arc::new(ScriptedBackend::new(Script::default()));
    let gateway = Gateway::scripted(backend.clone());
    let template = tcm_consult::eval::PromptTemplate::default();
    for (i, item) in items.iter().enumerate() {
        let wire = gateway.encode(&template.render(item), RequestMeta::new(Purpose::Evaluation));
        let pick = if i % 4 == 3 { (item.gold + 1) % item.options.len() } else { item.gold };
        backend.insert_fingerprint(wire.fingerprint, ScriptedReply::text(OPTION_LETTERS[pick].to_string()));
    }
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = EvalRunner::new(gateway).with_parallel(4).run(&items, "fixture-75", out.path(), None).map_err(|e| e.to_string())?;
    let report = score(&run, &items).map_err(|e| e.to_string())?;
    ensure(report.overall.accuracy == Fraction::new(3, 4), || format!("accuracy {}", report.overall.accuracy))?;
    let from_disk = EvalRunner::score_dir(&out.path().join(&run.run_id)).map_err(|e| e.to_string())?;
    ensure(from_disk == report, || "persisted run scores differently".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for r in 0..100 {
        let predictions: BTreeMap<String, Prediction> = items
            .iter()
            .map(|it| {
                let choice = if rng.gen_bool(0.1) { Choice::Unparseable } else { Choice::Index(rng.gen_range(0..it.options.len())) };
                (it.item_id.clone(), Prediction { item_id: it.item_id.clone(), choice, raw: String::new() })
            })
            .collect();
        // brute force: one counter per bucket
        let (mut correct, mut unparseable) = (0i64, 0u64);
        let mut by_cat: BTreeMap<String, (i64, i64)> = BTreeMap::new();
        let mut by_task: BTreeMap<EvalTask, (i64, i64)> = BTreeMap::new();
        for it in &items {
            let p = &predictions[&it.item_id];
            let hit = p.choice == Choice::Index(it.gold);
            if p.choice == Choice::Unparseable {
                unparseable += 1;
            }
            correct += hit as i64;
            let t = by_task.entry(it.task).or_default();
            t.0 += hit as i64;
            t.1 += 1;
            if it.task == EvalTask::SingleChoice {
                let c = by_cat.entry(it.category.clone().unwrap()).or_default();
                c.0 += hit as i64;
                c.1 += 1;
            }
        }
        let run = EvalRun {
            run_id: format!("r{r}"),
            model_label: "random".into(),
            predictions,
            started_at: chrono::Utc::now(),
            finished_at: None,
        };
        let rep = score(&run, &items).map_err(|e| e.to_string())?;
        let same = rep.overall.accuracy == Fraction::new(correct, items.len() as i64)
            && rep.unparseable == unparseable
            && rep.per_category.len() == by_cat.len()
            && by_cat.iter().all(|(k, &(c, n))| {
                rep.per_category.get(k).is_some_and(|t| t.correct as i64 == c && t.total as i64 == n && t.accuracy == Fraction::new(c, n))
            })
            && by_task.iter().all(|(k, &(c, n))| {
                rep.per_task.get(k).is_some_and(|t| t.correct as i64 == c && t.total as i64 == n && t.accuracy == Fraction::new(c, n))
            });
        ensure(same, || format!("run {r}: score disagrees with brute force"))?;
    }

    let raw: serde_json::Value =
        serde_json::from_str(include_str!("../data/reference_figures.json")).map_err(|e| e.to_string())?;
    let refs = ReferenceFigures::defaults();
    let table = render_comparison(&refs.tasks, &refs.rows);
    let lines: Vec<&str> = table.lines().collect();
    ensure(lines.len() == 2 + raw["rows"].as_array().unwrap().len(), || format!("table shape:\n{table}"))?;
    ensure(lines[0].contains("Herb recognition") && lines[0].contains("Constitution classification"), || {
        format!("table header: {}", lines[0])
    })?;
    for (row, line) in raw["rows"].as_array().unwrap().iter().zip(&lines[2..]) {
        let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        let want = [
            row["model"].as_str().unwrap(),
            row["HerbRecognition"].as_str().unwrap_or("n/a"),
            row["ConstitutionClassification"].as_str().unwrap_or("n/a"),
        ];
        ensure(cells == want, || format!("row {line:?} != {want:?}"))?;
    }
    ok("scripted 30/40 scores exactly 3/4; 100 random runs match brute force; reference table verbatim")
}

// ---------------------------------------------------------------------------
// Corpus

fn corpus_routing() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = common::fixture_corpus(dir.path());
    let reg = &corpus.registry;
    let titles = |tag: &str| -> Vec<String> {
        reg.route_category(&CategoryTag::new(tag)).iter().map(|id| reg.doc(id).unwrap().title.clone()).collect()
    };
    ensure(titles("FundamentalTheory") == ["Huangdi Neijing"], || format!("FundamentalTheory -> {:?}", titles("FundamentalTheory")))?;
    ensure(titles("TongueDiagnosis") == ["Atlas of TCM Tongue Diagnosis"], || {
        format!("TongueDiagnosis -> {:?}", titles("TongueDiagnosis"))
    })?;
    let book = PolicyBook::defaults();
    let theory_hits = corpus.retrieve_routed(&book.policy_for(ScenarioId::TheoryLearning).knowledge_tags, "yin yang", 3);
    ensure(theory_hits.first().is_some_and(|h| h.title == "Huangdi Neijing"), || {
        format!("theory retrieval: {:?}", theory_hits.iter().map(|h| &h.title).collect::<Vec<_>>())
    })?;
    let tongue_hits = corpus.retrieve_routed(&book.policy_for(ScenarioId::ConstitutionTongue).knowledge_tags, "tongue coating", 3);
    ensure(tongue_hits.iter().any(|h| h.title == "Atlas of TCM Tongue Diagnosis"), || {
        format!("tongue retrieval: {:?}", tongue_hits.iter().map(|h| &h.title).collect::<Vec<_>>())
    })?;

    // 20-document property corpus
    let strip = StripPatterns::defaults();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let words = ["qi", "blood", "yin", "yang", "spleen", "liver", "damp", "cold", "heat", "pulse", "tongue", "脾", "气"];
    let noise = ["Page 12", "  ", "\t", "PREFACE thanks END-PREFACE", "\r\n\r\n\r\n"];
    let tags = ["FundamentalTheory", "TongueDiagnosis", "Diagnostics", "Herbs"];
    let mut docs = Vec::new();
    for i in 0..20 {
        let mut raw = String::new();
        for _ in 0..rng.gen_range(5..40) {
            if rng.gen_bool(0.15) {
                raw.push_str(noise[rng.gen_range(0..noise.len())]);
                raw.push('\n');
            }
            raw.push_str(words[rng.gen_range(0..words.len())]);
            raw.push(if rng.gen_bool(0.2) { '\n' } else { ' ' });
        }
        let once = strip.clean(&raw);
        ensure(strip.clean(&once) == once, || format!("doc {i}: cleaning is not idempotent on {raw:?}"))?;
        let tag = CategoryTag::new(tags[i % tags.len()]);
        let doc = ingest_document(&raw, &format!("Doc {i}"), &[tag], &strip).map_err(|e| format!("doc {i}: {e}"))?;
        docs.push(doc);
    }
    for limit in [4, 7, 20] {
        let reg = merge_documents(docs.clone(), limit).map_err(|e| e.to_string())?;
        ensure(reg.entries.len() <= limit, || format!("limit {limit}: {} attachments", reg.entries.len()))?;
        let merged: Vec<_> = reg.ordered_docs().collect();
        let total_sources: usize = merged
            .iter()
            .map(|d| d.body.lines().filter(|l| is_separator_line(l)).count().max(1))
            .sum();
        ensure(total_sources == docs.len(), || format!("limit {limit}: {total_sources} sources after merge"))?;
        for d in &docs {
            let home = merged.iter().find(|m| m.doc_id == d.doc_id || m.body.contains(&separator_line(&d.title)));
            let home = home.ok_or_else(|| format!("limit {limit}: {} lost", d.title))?;
            ensure(home.body.contains(&d.body), || format!("limit {limit}: body of {} altered", d.title))?;
            ensure(d.category_tags.iter().all(|t| home.category_tags.contains(t)), || format!("limit {limit}: tags of {} lost", d.title))?;
        }
    }
    ok("fixture routing holds; 20 generated docs clean idempotently and survive merging at limits 4, 7, 20")
}

// ---------------------------------------------------------------------------
// Replay

fn replay_determinism() -> Result<Outcome, String> {
    let h = common::harness();
    let sessions = common::run_fixture_sessions(&h);
    ensure(sessions.len() >= 10, || format!("only {} fixture sessions", sessions.len()))?;
    let mut scenarios = std::collections::BTreeSet::new();
    let (mut safeguard, mut conservative) = (false, false);
    for (f, id) in &sessions {
        let snapshot = h.service.snapshot(id).map_err(|e| e.to_string())?.ok_or_else(|| format!("{}: no snapshot", f.name))?;
        let replayed = h.service.replay(id).map_err(|e| e.to_string())?;
        ensure(replayed == snapshot.state, || format!("{}: replay differs from snapshot", f.name))?;
        let a = serde_json::to_value(&replayed).unwrap();
        let b = serde_json::to_value(&snapshot.state).unwrap();
        ensure(a == b, || format!("{}: serialized replay differs", f.name))?;
        if let Some(s) = replayed.scenario {
            scenarios.insert(s);
        }
        safeguard |= replayed.mode.is_safeguard();
        conservative |= replayed.mode == SessionMode::ConservativeCompliant;
    }
    ensure(scenarios.len() == 4, || format!("fixtures cover only {scenarios:?}"))?;
    ensure(safeguard && conservative, || "fixtures miss safeguard or conservative mode".into())?;
    ensure(h.tongue.hits.load(std::sync::atomic::Ordering::Relaxed) > 0, || "tongue stub never called".into())?;
    ok(format!("{} sessions, all four scenarios, safeguard and conservative modes", sessions.len()))
}

fn offline_config() -> Result<Outcome, String> {
    let cfg = AppConfig::default();
    ensure(cfg.provider.endpoint.is_none(), || "default config points at a live provider".into())?;
    ok("default configuration uses the scripted provider; all endpoints are loopback stubs")
}

fn main() {
    let checks: [(&str, Check); 7] = [
        ("termination exhaustiveness", termination_exhaustiveness),
        ("threshold exactness", threshold_exactness),
        ("planner optimality", planner_optimality),
        ("safety fixpoint", safety_fixpoint),
        ("eval oracle equivalence", eval_oracle),
        ("corpus routing", corpus_routing),
        ("replay determinism", replay_determinism),
    ];
    let limits: BTreeMap<&str, Duration> =
        [("termination exhaustiveness", Duration::from_secs(10)), ("planner optimality", Duration::from_secs(5))].into();
    std::panic::set_hook(Box::new(|_| {}));
    let start = Instant::now();
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let elapsed = t.elapsed();
        let result = match (result, limits.get(name)) {
            (Ok(_), Some(limit)) if elapsed > *limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(o) => eprintln!("PASS {name} ({elapsed:.2?}): {}", o.detail),
            Err(e) => {
                failed += 1;
                eprintln!("FAIL {name} ({elapsed:.2?}): {e}");
            }
        }
    }
    let total = start.elapsed();
    let offline = offline_config().and_then(|o| {
        ensure(total < Duration::from_secs(120), || format!("suite took {total:.2?}"))?;
        Ok(o)
    });
    match offline {
        Ok(o) => eprintln!("PASS offline suite ({total:.2?}): {}", o.detail),
        Err(e) => {
            failed += 1;
            eprintln!("FAIL offline suite ({total:.2?}): {e}");
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
