//! Runs the 40-item fixture benchmark through a scripted provider that
//! always answers "A", then prints the CSV report and the comparison table.
//!
//! cargo run --example eval_report

use std::path::Path;
use std::sync::Arc;

use tcm_consult::eval::{
    load_benchmark, render_comparison, render_report, score, ComparisonRow, EvalRunner, ReferenceFigures, ReportFormat,
};
use tcm_consult::gateway::{Gateway, Script, ScriptedBackend, ScriptedReply};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bench = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bench_40.jsonl");
    let items = load_benchmark(&bench, None)?;
    let backend = Arc::new(ScriptedBackend::new(Script { fallback: Some(ScriptedReply::text("A")), ..Default::default() }));
    let out = tempfile::tempdir()?;
    let run = EvalRunner::new(Gateway::scripted(backend)).with_parallel(4).run(&items, "always-A", out.path(), None)?;
    let report = score(&run, &items)?;
    print!("{}", String::from_utf8(render_report(&report, ReportFormat::Csv)?)?);

    let refs = ReferenceFigures::defaults();
    let mut rows = refs.rows.clone();
    rows.push(ComparisonRow::from_report(&report, &refs.tasks));
    println!("\n{}", render_comparison(&refs.tasks, &rows));
    Ok(())
}
