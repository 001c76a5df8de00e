//! Cleans, merges and indexes the fixture corpus, then shows category
//! routing and a routed retrieval.
//!
//! cargo run --example ingest_corpus

use std::path::Path;

use tcm_consult::corpus::{ingest_manifest, CategoryTag, Corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus/manifest.json");
    let out = tempfile::tempdir()?;
    let summary = ingest_manifest(&manifest, out.path(), 6)?;
    println!("{} documents consolidated into {} attachments", summary.documents, summary.attachments);

    let corpus = Corpus::load(out.path())?;
    for (tag, ids) in &corpus.registry.routing {
        let titles: Vec<_> = ids.iter().filter_map(|id| corpus.registry.doc(id)).map(|d| d.title.as_str()).collect();
        println!("{tag:>20} -> {}", titles.join(", "));
    }
    for hit in corpus.retrieve_routed(&[CategoryTag::new("FundamentalTheory")], "yin yang balance", 2) {
        println!("[{:.2}] {}: {}", hit.score, hit.title, hit.snippet);
    }
    Ok(())
}
