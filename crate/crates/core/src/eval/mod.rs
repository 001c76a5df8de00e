//! Benchmark harness: single-choice accuracy by discipline, herb
//! recognition and constitution classification, run against any model the
//! gateway can reach.

mod report;
mod runner;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consult::Fraction;

pub use report::{
    emit_report, percent_2dp, render_report, render_comparison, ComparisonRow, PlotData, ReferenceFigures, ReportFormat,
    DEFAULT_REFERENCE_FIGURES,
};
pub use runner::{EvalRunner, PromptTemplate, DEFAULT_EVAL_TEMPLATE};

pub const DEFAULT_EVAL_CATEGORIES: &str = include_str!("../../data/eval_categories.json");

/// Option letters accepted by answer extraction.
pub const OPTION_LETTERS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalTask {
    SingleChoice,
    HerbRecognition,
    ConstitutionClassification,
}

impl EvalTask {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalTask::SingleChoice => "SingleChoice",
            EvalTask::HerbRecognition => "HerbRecognition",
            EvalTask::ConstitutionClassification => "ConstitutionClassification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub task: EvalTask,
    #[serde(default)]
    pub category: Option<String>,
    pub stem: String,
    pub options: Vec<String>,
    pub gold: usize,
    /// Image path relative to the benchmark file.
    #[serde(default)]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    Index(usize),
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub choice: Choice,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub run_id: String,
    pub model_label: String,
    pub predictions: BTreeMap<String, Prediction>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

/// Exact tally with its accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: u64,
    pub total: u64,
    pub accuracy: Fraction,
}

impl Tally {
    fn new(correct: u64, total: u64) -> Self {
        let accuracy = if total == 0 { Fraction::new(0, 1) } else { Fraction::new(correct as i64, total as i64) };
        Self { correct, total, accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_label: String,
    /// Single-choice items by discipline; categories without items are absent.
    pub per_category: BTreeMap<String, Tally>,
    pub per_task: BTreeMap<EvalTask, Tally>,
    pub overall: Tally,
    pub unparseable: u64,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path} line {line}: {message}")]
    Schema { path: String, line: usize, message: String },
    #[error("run and benchmark disagree: {0}")]
    ItemMismatch(String),
    #[error("run {run_id} aborted after {completed} items: {reason}")]
    Aborted { run_id: String, completed: usize, reason: String },
    #[error("unknown run '{0}'")]
    UnknownRun(String),
    #[error("{0}")]
    Io(String),
}

impl From<crate::jsonl::JsonlError> for EvalError {
    fn from(e: crate::jsonl::JsonlError) -> Self {
        match e {
            crate::jsonl::JsonlError::Parse { path, line, message } => EvalError::Schema { path, line, message },
            other => EvalError::Io(other.to_string()),
        }
    }
}

/// Checks one item against the benchmark rules.
pub fn validate_item(item: &EvalItem, categories: Option<&[String]>) -> Result<(), String> {
    if item.item_id.trim().is_empty() {
        return Err("item_id is empty".into());
    }
    if !(2..=OPTION_LETTERS.len()).contains(&item.options.len()) {
        return Err(format!("{} options; between 2 and {} are required", item.options.len(), OPTION_LETTERS.len()));
    }
    if item.gold >= item.options.len() {
        return Err(format!("gold index {} out of range for {} options", item.gold, item.options.len()));
    }
    if item.stem.trim().is_empty() || item.options.iter().any(|o| o.trim().is_empty()) {
        return Err("stem and options must be non-empty".into());
    }
    if item.task == EvalTask::SingleChoice {
        match (&item.category, categories) {
            (None, _) => return Err("single-choice items need a category".into()),
            (Some(c), Some(known)) if !known.contains(c) => return Err(format!("unknown category '{c}'")),
            _ => {}
        }
    }
    Ok(())
}

/// Loads a JSON-lines benchmark, rejecting invalid items and duplicate ids
/// with the offending line number.
pub fn load_benchmark(path: &Path, categories: Option<&[String]>) -> Result<Vec<EvalItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_benchmark(&text, &path.display().to_string(), categories)
}

pub fn parse_benchmark(text: &str, origin: &str, categories: Option<&[String]>) -> Result<Vec<EvalItem>, EvalError> {
    let schema = |line: usize, message: String| EvalError::Schema { path: origin.to_string(), line, message };
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(line).map_err(|e| schema(i + 1, e.to_string()))?;
        validate_item(&item, categories).map_err(|m| schema(i + 1, m))?;
        if !seen.insert(item.item_id.clone()) {
            return Err(schema(i + 1, format!("duplicate item_id '{}'", item.item_id)));
        }
        items.push(item);
    }
    Ok(items)
}

fn letter_index(c: char) -> Option<usize> {
    let c = match c {
        'Ａ'..='Ｅ' => char::from_u32(c as u32 - 'Ａ' as u32 + 'A' as u32)?,
        _ => c,
    };
    OPTION_LETTERS.iter().position(|&l| l == c)
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_ascii_alphanumeric() || ('Ａ'..='Ｚ').contains(&c) || ('ａ'..='ｚ').contains(&c))
}

/// Extracts the chosen option from a model reply.
///
/// The first standalone option letter (A to E, half- or full-width,
/// optionally in parentheses) that names one of the item's options wins.
/// Failing that, the option whose text appears earliest in the reply is
/// chosen, longer texts first at the same position. Otherwise the reply is
/// unparseable.
pub fn extract_answer(reply: &str, options: &[String]) -> Choice {
    let chars: Vec<char> = reply.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let Some(idx) = letter_index(c) else { continue };
        let before = if i == 0 { None } else { Some(chars[i - 1]) };
        let after = chars.get(i + 1).copied();
        if is_word_char(before) || is_word_char(after) {
            continue;
        }
        if idx < options.len() {
            return Choice::Index(idx);
        }
    }
    let mut best: Option<(usize, usize, usize)> = None;
    for (idx, opt) in options.iter().enumerate() {
        if let Some(pos) = reply.find(opt.as_str()) {
            let key = (pos, usize::MAX - opt.len(), idx);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
    }
    best.map_or(Choice::Unparseable, |(_, _, idx)| Choice::Index(idx))
}

/// Scores a run. Unparseable answers count as incorrect.
pub fn score(run: &EvalRun, items: &[EvalItem]) -> Result<EvalReport, EvalError> {
    let ids: HashSet<&str> = items.iter().map(|i| i.item_id.as_str()).collect();
    if let Some(extra) = run.predictions.keys().find(|k| !ids.contains(k.as_str())) {
        return Err(EvalError::ItemMismatch(format!("prediction for unknown item '{extra}'")));
    }
    let mut per_category: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut per_task: BTreeMap<EvalTask, (u64, u64)> = BTreeMap::new();
    let mut unparseable = 0;
    for item in items {
        let p = run
            .predictions
            .get(&item.item_id)
            .ok_or_else(|| EvalError::ItemMismatch(format!("no prediction for '{}'", item.item_id)))?;
        let correct = match p.choice {
            Choice::Index(i) => i == item.gold,
            Choice::Unparseable => {
                unparseable += 1;
                false
            }
        } as u64;
        let t = per_task.entry(item.task).or_default();
        t.0 += correct;
        t.1 += 1;
        if item.task == EvalTask::SingleChoice {
            if let Some(c) = &item.category {
                let e = per_category.entry(c.clone()).or_default();
                e.0 += correct;
                e.1 += 1;
            }
        }
    }
    let correct: u64 = per_task.values().map(|t| t.0).sum();
    let total: u64 = per_task.values().map(|t| t.1).sum();
    Ok(EvalReport {
        model_label: run.model_label.clone(),
        per_category: per_category.into_iter().map(|(k, (c, t))| (k, Tally::new(c, t))).collect(),
        per_task: per_task.into_iter().map(|(k, (c, t))| (k, Tally::new(c, t))).collect(),
        overall: Tally::new(correct, total),
        unparseable,
    })
}

pub fn default_categories() -> Vec<String> {
    serde_json::from_str(DEFAULT_EVAL_CATEGORIES).expect("shipped categories parse")
}
