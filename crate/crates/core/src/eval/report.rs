use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport, EvalTask, Tally};
use crate::consult::Fraction;

pub const DEFAULT_REFERENCE_FIGURES: &str = include_str!("../../data/reference_figures.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plot" | "plot-data" | "plotdata" => Ok(ReportFormat::PlotData),
            other => Err(format!("unknown report format '{other}'")),
        }
    }
}

/// Accuracy as a percentage with two decimals, rounded half up from the
/// exact fraction.
pub fn percent_2dp(x: Fraction) -> String {
    let n = *x.numer() as i128 * 10_000;
    let d = *x.denom() as i128;
    let hundredths = (2 * n + d).div_euclid(2 * d);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

fn as_f64(x: Fraction) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

fn csv_bytes(report: &EvalReport) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| EvalError::Io(e.to_string());
    w.write_record(["task", "category", "correct", "total", "accuracy"]).map_err(io)?;
    let mut row = |task: EvalTask, category: &str, t: &Tally| {
        w.write_record([
            task.as_str(),
            category,
            &t.correct.to_string(),
            &t.total.to_string(),
            &format!("{:.4}", as_f64(t.accuracy)),
        ])
        .map_err(io)
    };
    for (cat, t) in &report.per_category {
        row(EvalTask::SingleChoice, cat, t)?;
    }
    for (task, t) in &report.per_task {
        if *task != EvalTask::SingleChoice {
            row(*task, "", t)?;
        }
    }
    w.into_inner().map_err(|e| EvalError::Io(e.to_string()))
}

/// Renders `report` in `format`. CSV has one row per single-choice
/// category plus one row per other task.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<Vec<u8>, EvalError> {
    match format {
        ReportFormat::Csv => csv_bytes(report),
        ReportFormat::Json => Ok(serde_json::to_vec_pretty(report).expect("report serializes")),
        ReportFormat::PlotData => Ok(serde_json::to_vec_pretty(&PlotData::from_reports(std::slice::from_ref(report)))
            .expect("plot data serializes")),
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    let bytes = render_report(report, format)?;
    crate::jsonl::write_atomic(path, &bytes)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    /// Aligned with `categories`; `None` where the model has no items.
    pub accuracy: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub label: String,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

/// Chart-ready data: accuracy by category per model, and one point per
/// model on the herb-recognition vs constitution-classification plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub categories: Vec<String>,
    pub category_series: Vec<Series>,
    pub x_task: EvalTask,
    pub y_task: EvalTask,
    pub task_scatter: Vec<ScatterPoint>,
}

impl PlotData {
    pub fn from_reports(reports: &[EvalReport]) -> Self {
        let mut categories: Vec<String> = reports.iter().flat_map(|r| r.per_category.keys().cloned()).collect();
        categories.sort();
        categories.dedup();
        let category_series = reports
            .iter()
            .map(|r| Series {
                label: r.model_label.clone(),
                accuracy: categories.iter().map(|c| r.per_category.get(c).map(|t| as_f64(t.accuracy))).collect(),
            })
            .collect();
        let x_task = EvalTask::HerbRecognition;
        let y_task = EvalTask::ConstitutionClassification;
        let task_scatter = reports
            .iter()
            .map(|r| ScatterPoint {
                label: r.model_label.clone(),
                x: r.per_task.get(&x_task).map(|t| as_f64(t.accuracy)),
                y: r.per_task.get(&y_task).map(|t| as_f64(t.accuracy)),
            })
            .collect();
        Self { categories, category_series, x_task, y_task, task_scatter }
    }
}

/// One model's task accuracies as percentage strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub values: BTreeMap<EvalTask, Option<String>>,
}

impl ComparisonRow {
    pub fn from_report(report: &EvalReport, tasks: &[EvalTask]) -> Self {
        Self {
            model: report.model_label.clone(),
            values: tasks
                .iter()
                .map(|t| (*t, report.per_task.get(t).map(|x| percent_2dp(x.accuracy))))
                .collect(),
        }
    }
}

/// Published comparison figures, kept as the exact strings reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceFigures {
    pub tasks: Vec<EvalTask>,
    pub rows: Vec<ComparisonRow>,
}

impl ReferenceFigures {
    pub fn from_json(json: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Raw {
            tasks: Vec<EvalTask>,
            rows: Vec<BTreeMap<String, Option<String>>>,
        }
        let raw: Raw = serde_json::from_str(json).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for mut r in raw.rows {
            let model = r.remove("model").flatten().ok_or("row without model")?;
            let values = raw
                .tasks
                .iter()
                .map(|t| (*t, r.get(t.as_str()).cloned().flatten()))
                .collect();
            rows.push(ComparisonRow { model, values });
        }
        Ok(Self { tasks: raw.tasks, rows })
    }

    pub fn defaults() -> Self {
        Self::from_json(DEFAULT_REFERENCE_FIGURES).expect("shipped reference figures parse")
    }
}

fn task_heading(t: EvalTask) -> &'static str {
    match t {
        EvalTask::SingleChoice => "Single choice (%)",
        EvalTask::HerbRecognition => "Herb recognition (%)",
        EvalTask::ConstitutionClassification => "Constitution classification (%)",
    }
}

/// Markdown table with one row per model and one column per task.
pub fn render_comparison(tasks: &[EvalTask], rows: &[ComparisonRow]) -> String {
    let mut out = String::from("| Model |");
    for t in tasks {
        out.push_str(&format!(" {} |", task_heading(*t)));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(tasks.len()));
    for r in rows {
        out.push_str(&format!("\n| {} |", r.model));
        for t in tasks {
            let v = r.values.get(t).cloned().flatten().unwrap_or_else(|| "n/a".into());
            out.push_str(&format!(" {v} |"));
        }
    }
    out.push('\n');
    out
}
