use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ConsultError, DiagnosticElement, EvidenceLedger};

pub const DEFAULT_QUESTION_POOL: &str = include_str!("../../data/question_pool.json");

/// Hard cap on questions per inquiry round.
pub const MAX_QUESTIONS_PER_ROUND: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(pub u32);

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilingualText {
    pub en: String,
    pub zh: String,
}

impl BilingualText {
    pub fn pick(&self, chinese: bool) -> &str {
        if chinese { &self.zh } else { &self.en }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InquiryQuestion {
    pub id: QuestionId,
    pub text: BilingualText,
    pub targets: BTreeSet<DiagnosticElement>,
}

impl InquiryQuestion {
    pub fn mask(&self) -> u8 {
        self.targets.iter().fold(0, |m, e| m | e.bit())
    }
}

/// Validated question pool: unique ids, non-empty targets, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuestionPool(Vec<InquiryQuestion>);

impl QuestionPool {
    pub fn new(mut questions: Vec<InquiryQuestion>) -> Result<Self, ConsultError> {
        questions.sort_by_key(|q| q.id);
        let mut seen = HashSet::new();
        for q in &questions {
            if !seen.insert(q.id) {
                return Err(ConsultError::Data(format!("duplicate question id {}", q.id)));
            }
            if q.targets.is_empty() {
                return Err(ConsultError::Data(format!("question {} has no targets", q.id)));
            }
        }
        Ok(Self(questions))
    }

    pub fn from_json(json: &str) -> Result<Self, ConsultError> {
        let qs: Vec<InquiryQuestion> =
            serde_json::from_str(json).map_err(|e| ConsultError::Data(e.to_string()))?;
        Self::new(qs)
    }

    pub fn defaults() -> Self {
        Self::from_json(DEFAULT_QUESTION_POOL).expect("shipped question pool is valid")
    }

    pub fn questions(&self) -> &[InquiryQuestion] {
        &self.0
    }

    pub fn get(&self, id: QuestionId) -> Option<&InquiryQuestion> {
        self.0.iter().find(|q| q.id == id)
    }

    /// Pool without the given ids.
    pub fn without(&self, asked: &[QuestionId]) -> Vec<InquiryQuestion> {
        self.0.iter().filter(|q| !asked.contains(&q.id)).cloned().collect()
    }
}

fn effective_budget(budget: usize) -> usize {
    budget.min(MAX_QUESTIONS_PER_ROUND)
}

/// Greedy max-coverage selection over `pool` (indices into it).
///
/// Each step takes the question adding the most uncovered elements of
/// `unknown`, ties to the lower id; stops at the budget or when no question
/// adds anything.
pub fn greedy_plan(unknown: u8, pool: &[InquiryQuestion], budget: usize) -> Vec<usize> {
    let budget = effective_budget(budget);
    let mut covered = 0u8;
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < budget {
        let best = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked.contains(i))
            .map(|(i, q)| (i, (q.mask() & unknown & !covered).count_ones(), q.id))
            .filter(|&(_, gain, _)| gain > 0)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)));
        match best {
            Some((i, _, _)) => {
                covered |= pool[i].mask() & unknown;
                picked.push(i);
            }
            None => break,
        }
    }
    picked
}

/// Best achievable coverage of `unknown` with at most `budget` questions.
///
/// Returns the covered mask and the chosen indices: among optimal sets, the
/// one with fewest questions, then the lexicographically smallest sorted ids.
/// Runs a 0/1 knapsack over (covered mask, question count).
pub fn exact_max_coverage(unknown: u8, pool: &[InquiryQuestion], budget: usize) -> (u8, Vec<usize>) {
    let budget = effective_budget(budget);
    let mut order: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].mask() & unknown != 0).collect();
    order.sort_by_key(|&i| pool[i].id);

    // best[count][mask] = smallest id-sorted index list reaching `mask` with `count` questions.
    let mut best: Vec<Vec<Option<Vec<usize>>>> = vec![vec![None; 64]; budget + 1];
    best[0][0] = Some(Vec::new());
    let key = |v: &Vec<usize>| v.iter().map(|&i| pool[i].id).collect::<Vec<_>>();
    for &qi in &order {
        let qmask = pool[qi].mask() & unknown;
        for count in (0..budget).rev() {
            for mask in 0..64usize {
                let Some(cur) = best[count][mask].clone() else { continue };
                let next_mask = mask | qmask as usize;
                let mut cand = cur;
                cand.push(qi);
                let slot = &mut best[count + 1][next_mask];
                let better = match slot {
                    None => true,
                    Some(existing) => key(&cand) < key(existing),
                };
                if better {
                    *slot = Some(cand);
                }
            }
        }
    }

    // (covered count, question count, sorted ids, covered mask, indices)
    type Candidate = (u32, usize, Vec<QuestionId>, u8, Vec<usize>);
    let mut winner: Option<Candidate> = None;
    for (count, row) in best.iter().enumerate() {
        for (mask, entry) in row.iter().enumerate() {
            let Some(set) = entry else { continue };
            let cov = (mask as u8).count_ones();
            let ids = key(set);
            let better = match &winner {
                None => true,
                Some((wc, wn, wids, _, _)) => {
                    cov > *wc || (cov == *wc && (count < *wn || (count == *wn && ids < *wids)))
                }
            };
            if better {
                winner = Some((cov, count, ids, mask as u8, set.clone()));
            }
        }
    }
    let (_, _, _, mask, set) = winner.expect("empty selection is always reachable");
    (mask, set)
}

/// Orders a chosen set so each question adds the most new elements given
/// those before it, ties to the lower id.
fn order_by_gain(unknown: u8, pool: &[InquiryQuestion], mut chosen: Vec<usize>) -> Vec<usize> {
    let mut covered = 0u8;
    let mut out = Vec::with_capacity(chosen.len());
    while !chosen.is_empty() {
        let (pos, _) = chosen
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos, ((pool[i].mask() & unknown & !covered).count_ones(), pool[i].id)))
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .unwrap();
        let i = chosen.remove(pos);
        covered |= pool[i].mask() & unknown;
        out.push(i);
    }
    out
}

/// Picks at most `min(budget, 5)` questions covering as many Unknown
/// elements as possible.
///
/// Greedy selection is used when it reaches the optimum, which it does on
/// nearly all pools; otherwise the exact optimum replaces it. Questions
/// whose targets are all Known are never chosen.
pub fn plan_inquiry(
    ledger: &EvidenceLedger,
    pool: &[InquiryQuestion],
    budget: usize,
) -> Result<Vec<InquiryQuestion>, ConsultError> {
    let unknown = !ledger.known_mask() & 0b11_1111;
    if unknown == 0 {
        return Ok(Vec::new());
    }
    if pool.is_empty() {
        return Err(ConsultError::EmptyPool);
    }
    let greedy = greedy_plan(unknown, pool, budget);
    let greedy_cov = greedy.iter().fold(0u8, |m, &i| m | (pool[i].mask() & unknown)).count_ones();
    let (best_mask, exact) = exact_max_coverage(unknown, pool, budget);
    let chosen = if greedy_cov >= best_mask.count_ones() {
        greedy
    } else {
        order_by_gain(unknown, pool, exact)
    };
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use DiagnosticElement::*;

    fn q(id: u32, targets: &[DiagnosticElement]) -> InquiryQuestion {
        InquiryQuestion {
            id: QuestionId(id),
            text: BilingualText { en: format!("question {id}"), zh: format!("问题{id}") },
            targets: targets.iter().copied().collect(),
        }
    }

    fn ledger_known(known: &[DiagnosticElement]) -> EvidenceLedger {
        let mut l = EvidenceLedger::new();
        let f: Vec<_> = known.iter().map(|e| (*e, "x".to_string())).collect();
        l.apply(&f, 1);
        l
    }

    fn ids(qs: &[InquiryQuestion]) -> Vec<u32> {
        qs.iter().map(|q| q.id.0).collect()
    }

    #[test]
    fn prefers_wider_question_then_lower_id() {
        let l = ledger_known(&[DeficiencyExcess, InteriorExterior]);
        let pool = [q(1, &[ColdHeat]), q(2, &[Qi, Blood]), q(3, &[Fluids])];
        assert_eq!(ids(&plan_inquiry(&l, &pool, 2).unwrap()), vec![2, 1]);
    }

    #[test]
    fn all_known_yields_nothing() {
        let l = ledger_known(&DiagnosticElement::ALL);
        assert!(plan_inquiry(&l, &[q(1, &[Qi])], 3).unwrap().is_empty());
        assert!(plan_inquiry(&l, &[], 3).unwrap().is_empty());
    }

    #[test]
    fn single_relevant_question() {
        let l = ledger_known(&[ColdHeat]);
        let pool = [q(1, &[ColdHeat]), q(2, &[Blood])];
        assert_eq!(ids(&plan_inquiry(&l, &pool, 5).unwrap()), vec![2]);
    }

    #[test]
    fn empty_pool_is_an_error() {
        assert!(matches!(plan_inquiry(&EvidenceLedger::new(), &[], 3), Err(ConsultError::EmptyPool)));
    }

    #[test]
    fn budget_is_capped_at_five() {
        let pool: Vec<_> = DiagnosticElement::ALL.iter().enumerate().map(|(i, e)| q(i as u32 + 1, &[*e])).collect();
        assert_eq!(plan_inquiry(&EvidenceLedger::new(), &pool, 9).unwrap().len(), 5);
    }

    #[test]
    fn greedy_alone_can_miss_the_optimum() {
        let pool = [q(1, &[Qi, Blood, Fluids]), q(2, &[ColdHeat, DeficiencyExcess, InteriorExterior]), q(3, &[DeficiencyExcess, InteriorExterior, Qi, Blood])];
        let unknown = 0b11_1111;
        let g = greedy_plan(unknown, &pool, 2);
        assert_eq!(g, vec![2, 0]);
        let cov = g.iter().fold(0u8, |m, &i| m | pool[i].mask()).count_ones();
        assert_eq!(cov, 5);
        assert_eq!(ids(&plan_inquiry(&EvidenceLedger::new(), &pool, 2).unwrap()), vec![1, 2]);
    }

    #[test]
    fn shipped_pool_is_valid() {
        let pool = QuestionPool::defaults();
        let all: u8 = pool.questions().iter().fold(0, |m, q| m | q.mask());
        assert_eq!(all, 0b11_1111);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(QuestionPool::new(vec![q(1, &[Qi]), q(1, &[Blood])]).is_err());
        assert!(QuestionPool::new(vec![q(1, &[])]).is_err());
    }

    fn arb_pool() -> impl Strategy<Value = Vec<InquiryQuestion>> {
        prop::collection::vec(prop::collection::btree_set(0usize..6, 1..=3), 0..=10).prop_map(|sets| {
            sets.into_iter()
                .enumerate()
                .map(|(i, s)| {
                    let t: Vec<_> = s.into_iter().map(|k| DiagnosticElement::ALL[k]).collect();
                    q(i as u32 + 1, &t)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn output_is_bounded_and_relevant(pool in arb_pool(), known in 0u8..64, budget in 1usize..=7) {
            let known_elems: Vec<_> = DiagnosticElement::ALL.iter().copied().filter(|e| known & e.bit() != 0).collect();
            let l = ledger_known(&known_elems);
            match plan_inquiry(&l, &pool, budget) {
                Ok(out) => {
                    prop_assert!(out.len() <= budget.min(5));
                    let mut covered = known;
                    for q in &out {
                        prop_assert!(q.mask() & !covered != 0);
                        covered |= q.mask();
                    }
                }
                Err(ConsultError::EmptyPool) => prop_assert!(pool.is_empty() && known != 0b11_1111),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
