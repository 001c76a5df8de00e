use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{extract_answer, score, EvalError, EvalItem, EvalReport, EvalRun, Prediction, OPTION_LETTERS};
use crate::gateway::{Gateway, PromptBundle, Purpose, RequestMeta};
use crate::jsonl;

pub const DEFAULT_EVAL_TEMPLATE: &str = "{stem}\n\n{options}\n\nAnswer with the letter of the single correct option.";

const EVAL_SYSTEM: &str = "You are taking a Traditional Chinese Medicine examination. Choose exactly one option.";

/// Item prompt. `{stem}`, `{options}` and `{image}` are substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { system: EVAL_SYSTEM.into(), user: DEFAULT_EVAL_TEMPLATE.into() }
    }
}

impl PromptTemplate {
    pub fn render(&self, item: &EvalItem) -> PromptBundle {
        let options: Vec<String> = item
            .options
            .iter()
            .zip(OPTION_LETTERS)
            .map(|(o, l)| format!("{l}. {o}"))
            .collect();
        let mut user = self.user.replace("{stem}", &item.stem).replace("{options}", &options.join("\n"));
        let image = item.image_ref.as_deref().map(|r| format!("Image: {r}")).unwrap_or_default();
        if user.contains("{image}") {
            user = user.replace("{image}", &image);
        } else if !image.is_empty() {
            user = format!("{image}\n\n{user}");
        }
        PromptBundle::utility(&self.system, &user)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunMeta {
    run_id: String,
    model_label: String,
    started_at: DateTime<Utc>,
    finished_at: Option<DateTime<Utc>>,
}

/// Runs benchmarks through a gateway, persisting each prediction as it
/// completes so an aborted run can be resumed.
pub struct EvalRunner {
    gateway: Gateway,
    template: PromptTemplate,
    parallel: usize,
}

fn run_dir(out: &Path, run_id: &str) -> PathBuf {
    out.join(run_id)
}

fn write_meta(dir: &Path, meta: &RunMeta) -> Result<(), EvalError> {
    let bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
    jsonl::write_atomic(&dir.join("run.json"), &bytes)?;
    Ok(())
}

impl EvalRunner {
    pub fn new(gateway: Gateway) -> Self {
        Self { gateway, template: PromptTemplate::default(), parallel: 1 }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_parallel(mut self, n: usize) -> Self {
        self.parallel = n.max(1);
        self
    }

    /// Loads a persisted run from `out/<run_id>`.
    pub fn load_run(out: &Path, run_id: &str) -> Result<EvalRun, EvalError> {
        Self::load_run_dir(&run_dir(out, run_id))
    }

    /// Loads a persisted run from its own directory.
    pub fn load_run_dir(dir: &Path) -> Result<EvalRun, EvalError> {
        let unknown = || EvalError::UnknownRun(dir.display().to_string());
        let bytes = std::fs::read(dir.join("run.json")).map_err(|_| unknown())?;
        let meta: RunMeta = serde_json::from_slice(&bytes).map_err(|e| EvalError::Io(e.to_string()))?;
        let preds: Vec<Prediction> = jsonl::read_all(&dir.join("predictions.jsonl"))?;
        Ok(EvalRun {
            run_id: meta.run_id,
            model_label: meta.model_label,
            predictions: preds.into_iter().map(|p| (p.item_id.clone(), p)).collect(),
            started_at: meta.started_at,
            finished_at: meta.finished_at,
        })
    }

    /// Items the run in `dir` was started with.
    pub fn load_items(dir: &Path) -> Result<Vec<EvalItem>, EvalError> {
        let items: Vec<EvalItem> = jsonl::read_all(&dir.join("items.jsonl"))?;
        if items.is_empty() {
            return Err(EvalError::UnknownRun(dir.display().to_string()));
        }
        Ok(items)
    }

    /// Scores the run in `dir` against the items stored with it.
    pub fn score_dir(dir: &Path) -> Result<EvalReport, EvalError> {
        let run = Self::load_run_dir(dir)?;
        let items = Self::load_items(dir)?;
        score(&run, &items)
    }

    fn ask(&self, item: &EvalItem) -> Result<Prediction, String> {
        let resp = self
            .gateway
            .complete(&self.template.render(item), RequestMeta::new(Purpose::Evaluation))
            .map_err(|e| e.to_string())?;
        Ok(Prediction {
            item_id: item.item_id.clone(),
            choice: extract_answer(&resp.text, &item.options),
            raw: resp.text,
        })
    }

    /// Evaluates `items` in id order, `parallel` at a time. With `resume`,
    /// continues that run and skips items it already answered. A gateway
    /// failure stops the run with [`EvalError::Aborted`]; answers obtained
    /// so far stay on disk.
    pub fn run(
        &self,
        items: &[EvalItem],
        model_label: &str,
        out: &Path,
        resume: Option<&str>,
    ) -> Result<EvalRun, EvalError> {
        let mut run = match resume {
            Some(id) => Self::load_run(out, id)?,
            None => EvalRun {
                run_id: uuid::Uuid::new_v4().to_string(),
                model_label: model_label.to_string(),
                predictions: BTreeMap::new(),
                started_at: Utc::now(),
                finished_at: None,
            },
        };
        let dir = run_dir(out, &run.run_id);
        let mut meta = RunMeta {
            run_id: run.run_id.clone(),
            model_label: run.model_label.clone(),
            started_at: run.started_at,
            finished_at: None,
        };
        write_meta(&dir, &meta)?;
        if resume.is_none() {
            let mut bytes = Vec::new();
            for item in items {
                serde_json::to_writer(&mut bytes, item).expect("item serializes");
                bytes.push(b'\n');
            }
            jsonl::write_atomic(&dir.join("items.jsonl"), &bytes)?;
        }

        let mut todo: Vec<&EvalItem> = items.iter().filter(|i| !run.predictions.contains_key(&i.item_id)).collect();
        todo.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let preds_path = dir.join("predictions.jsonl");
        for chunk in todo.chunks(self.parallel) {
            let results: Vec<Result<Prediction, String>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|item| s.spawn(|| self.ask(item))).collect();
                handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
            });
            let mut done = Vec::new();
            let mut failure = None;
            for r in results {
                match r {
                    Ok(p) => done.push(p),
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            jsonl::append(&preds_path, &done)?;
            for p in done {
                run.predictions.insert(p.item_id.clone(), p);
            }
            if let Some(reason) = failure {
                return Err(EvalError::Aborted {
                    run_id: run.run_id.clone(),
                    completed: run.predictions.len(),
                    reason,
                });
            }
        }
        let finished = Utc::now();
        run.finished_at = Some(finished);
        meta.finished_at = Some(finished);
        write_meta(&dir, &meta)?;
        Ok(run)
    }
}
