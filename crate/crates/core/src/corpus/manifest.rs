use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ingest_document, merge_documents, AttachmentRegistry, CategoryTag, CorpusError, LexicalIndex,
    StripPatterns,
};

/// Corpus manifest: one entry per UTF-8 text file, paths relative to the
/// manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Replaces the built-in strip patterns for every file when present.
    #[serde(default)]
    pub strip_patterns: Option<Vec<String>>,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: PathBuf,
    pub title: String,
    pub tags: Vec<CategoryTag>,
    /// Per-file override of the strip patterns.
    #[serde(default)]
    pub strip_patterns: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub attachments: usize,
    pub registry_path: PathBuf,
    pub index_path: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&raw).map_err(|e| CorpusError::Manifest(format!("{}: {e}", path.display())))
    }
}

/// Reads every manifest file, cleans and merges them, and writes
/// `registry.json` and `index.json` into `out_dir`.
pub fn ingest_manifest(
    manifest_path: &Path,
    out_dir: &Path,
    max_attachments: usize,
) -> Result<IngestSummary, CorpusError> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let default_strip = match &manifest.strip_patterns {
        Some(p) => StripPatterns::compile(p)?,
        None => StripPatterns::defaults(),
    };

    let mut docs = Vec::with_capacity(manifest.files.len());
    for file in &manifest.files {
        let path = base.join(&file.path);
        let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
        let strip = match &file.strip_patterns {
            Some(p) => StripPatterns::compile(p)?,
            None => default_strip.clone(),
        };
        let doc = ingest_document(&raw, &file.title, &file.tags, &strip)?
            .with_source_note(file.path.display().to_string());
        docs.push(doc);
    }
    let documents = docs.len();
    let registry = merge_documents(docs, max_attachments)?;
    let index = LexicalIndex::build(&registry);

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let registry_path = out_dir.join("registry.json");
    let index_path = out_dir.join("index.json");
    fs::write(&registry_path, serde_json::to_vec_pretty(&registry)?).map_err(io_err(&registry_path))?;
    fs::write(&index_path, serde_json::to_vec(&index)?).map_err(io_err(&index_path))?;
    Ok(IngestSummary {
        documents,
        attachments: registry.entries.len(),
        registry_path,
        index_path,
    })
}

impl AttachmentRegistry {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        let reg: Self = serde_json::from_str(&raw)?;
        reg.validate()?;
        Ok(reg)
    }
}

impl LexicalIndex {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        let idx: Self = serde_json::from_str(&raw)?;
        if idx.format_version != super::FORMAT_VERSION {
            return Err(CorpusError::InvalidRegistry(format!(
                "unsupported index format_version {}",
                idx.format_version
            )));
        }
        Ok(idx)
    }
}
