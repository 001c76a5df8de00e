use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DiagnosticElement, Fraction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub text: String,
    /// 1-based index of the user turn that supplied the finding.
    pub turn: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "finding")]
pub enum ElementStatus {
    Unknown,
    Known(Finding),
}

/// Status of the six core diagnostic elements.
///
/// A Known element never reverts. Later findings on a Known element are
/// kept as notes; a note that disagrees with the original finding marks the
/// element as contested instead of overwriting it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LedgerRepr", into = "LedgerRepr")]
pub struct EvidenceLedger {
    status: BTreeMap<DiagnosticElement, ElementStatus>,
    notes: BTreeMap<DiagnosticElement, Vec<String>>,
    contested: BTreeSet<DiagnosticElement>,
}

#[derive(Serialize, Deserialize)]
struct LedgerRepr {
    status: BTreeMap<DiagnosticElement, ElementStatus>,
    #[serde(default)]
    notes: BTreeMap<DiagnosticElement, Vec<String>>,
    #[serde(default)]
    contested: BTreeSet<DiagnosticElement>,
}

impl TryFrom<LedgerRepr> for EvidenceLedger {
    type Error = String;

    fn try_from(r: LedgerRepr) -> Result<Self, Self::Error> {
        if r.status.len() != DiagnosticElement::ALL.len() {
            return Err(format!("ledger must hold six elements, found {}", r.status.len()));
        }
        Ok(Self {
            status: r.status,
            notes: r.notes,
            contested: r.contested,
        })
    }
}

impl From<EvidenceLedger> for LedgerRepr {
    fn from(l: EvidenceLedger) -> Self {
        Self {
            status: l.status,
            notes: l.notes,
            contested: l.contested,
        }
    }
}

impl Default for EvidenceLedger {
    fn default() -> Self {
        Self::new()
    }
}

fn same_finding(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

impl EvidenceLedger {
    /// All six elements Unknown.
    pub fn new() -> Self {
        Self {
            status: DiagnosticElement::ALL
                .into_iter()
                .map(|e| (e, ElementStatus::Unknown))
                .collect(),
            notes: BTreeMap::new(),
            contested: BTreeSet::new(),
        }
    }

    pub fn status(&self, e: DiagnosticElement) -> &ElementStatus {
        &self.status[&e]
    }

    pub fn is_known(&self, e: DiagnosticElement) -> bool {
        matches!(self.status[&e], ElementStatus::Known(_))
    }

    pub fn known(&self) -> impl Iterator<Item = (DiagnosticElement, &Finding)> {
        self.status.iter().filter_map(|(e, s)| match s {
            ElementStatus::Known(f) => Some((*e, f)),
            ElementStatus::Unknown => None,
        })
    }

    pub fn unknown(&self) -> BTreeSet<DiagnosticElement> {
        DiagnosticElement::ALL
            .into_iter()
            .filter(|e| !self.is_known(*e))
            .collect()
    }

    pub fn known_count(&self) -> usize {
        self.known().count()
    }

    /// Bitmask of Known elements, see [`DiagnosticElement::bit`].
    pub fn known_mask(&self) -> u8 {
        self.known().fold(0, |m, (e, _)| m | e.bit())
    }

    pub fn notes(&self, e: DiagnosticElement) -> &[String] {
        self.notes.get(&e).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_contested(&self, e: DiagnosticElement) -> bool {
        self.contested.contains(&e)
    }

    /// Known count over six, as an exact fraction.
    pub fn coverage(&self) -> Fraction {
        Fraction::new(self.known_count() as i64, DiagnosticElement::ALL.len() as i64)
    }

    /// Records findings in place; first write wins.
    pub fn apply(&mut self, findings: &[(DiagnosticElement, String)], turn: u32) {
        for (e, text) in findings {
            match self.status.get_mut(e).expect("all six elements present") {
                slot @ ElementStatus::Unknown => {
                    *slot = ElementStatus::Known(Finding {
                        text: text.clone(),
                        turn,
                    })
                }
                ElementStatus::Known(original) => {
                    if !same_finding(&original.text, text) {
                        self.contested.insert(*e);
                    }
                    self.notes.entry(*e).or_default().push(text.clone());
                }
            }
        }
    }
}

/// Returns `ledger` with `findings` recorded at `turn_index`.
pub fn update_ledger(
    ledger: &EvidenceLedger,
    findings: &[(DiagnosticElement, String)],
    turn_index: u32,
) -> EvidenceLedger {
    let mut next = ledger.clone();
    next.apply(findings, turn_index);
    next
}
