use regex::Regex;
use sha2::{Digest, Sha256};

use super::{CategoryTag, CorpusError, DocId, KnowledgeDoc};
use crate::text::normalize_whitespace;

/// Boilerplate regions removed by default: delimited preface,
/// acknowledgment and publication-note blocks, plus single-line imprint
/// notes (ISBN, copyright, publisher lines) in English and Chinese.
pub const DEFAULT_STRIP_PATTERNS: &[&str] = &[
    r"(?s)PREFACE.*?END-PREFACE",
    r"(?s)ACKNOWLEDG(?:E)?MENTS?.*?END-ACKNOWLEDG(?:E)?MENTS?",
    r"(?s)PUBLICATION NOTE.*?END-PUBLICATION NOTE",
    r"(?s)【前言】.*?【前言完】",
    r"(?s)【致谢】.*?【致谢完】",
    r"(?s)【出版说明】.*?【出版说明完】",
    r"(?im)^[ \t]*(?:ISBN|Copyright|©|Published by|Printed in|版权所有|出版发行|书号)[^\n]*$",
];

/// Compiled strip patterns.
#[derive(Debug, Clone)]
pub struct StripPatterns {
    patterns: Vec<Regex>,
}

impl StripPatterns {
    pub fn compile<S: AsRef<str>>(patterns: &[S]) -> Result<Self, CorpusError> {
        let patterns = patterns
            .iter()
            .map(|p| {
                Regex::new(p.as_ref()).map_err(|source| CorpusError::BadPattern {
                    pattern: p.as_ref().to_string(),
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn defaults() -> Self {
        Self::compile(DEFAULT_STRIP_PATTERNS).expect("default strip patterns compile")
    }

    pub fn none() -> Self {
        Self { patterns: Vec::new() }
    }

    pub fn as_strs(&self) -> Vec<&str> {
        self.patterns.iter().map(|r| r.as_str()).collect()
    }

    fn strip_once(&self, text: &str) -> String {
        let mut out = text.to_string();
        for re in &self.patterns {
            if re.is_match(&out) {
                out = re.replace_all(&out, "").into_owned();
            }
        }
        out
    }

    /// Strips and normalizes until nothing changes, so a removal can never
    /// expose a fresh match in the output.
    pub fn clean(&self, text: &str) -> String {
        let mut current = normalize_whitespace(text);
        loop {
            let next = normalize_whitespace(&self.strip_once(&current));
            if next == current {
                return current;
            }
            current = next;
        }
    }
}

fn derive_doc_id(title: &str, body: &str) -> DocId {
    let mut h = Sha256::new();
    h.update(title.as_bytes());
    h.update([0u8]);
    h.update(body.as_bytes());
    let digest = h.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    DocId::new(format!("doc-{hex}"))
}

/// Cleans raw extracted text into a [`KnowledgeDoc`].
///
/// Tags are stored in the given order with duplicates dropped; the first tag
/// becomes the document's primary category.
pub fn ingest_document(
    raw_text: &str,
    title: &str,
    tags: &[CategoryTag],
    strip: &StripPatterns,
) -> Result<KnowledgeDoc, CorpusError> {
    if normalize_whitespace(raw_text).trim().is_empty() {
        return Err(CorpusError::EmptyInput(title.to_string()));
    }
    let body = strip.clean(raw_text);
    if body.trim().is_empty() {
        return Err(CorpusError::EmptyAfterCleaning(title.to_string()));
    }
    let mut category_tags: Vec<CategoryTag> = Vec::with_capacity(tags.len());
    for t in tags {
        if !category_tags.contains(t) {
            category_tags.push(t.clone());
        }
    }
    let title = title.replace(['\n', '\r'], " ").trim().to_string();
    Ok(KnowledgeDoc {
        doc_id: derive_doc_id(&title, &body),
        char_count: body.chars().count(),
        title,
        category_tags,
        body,
        source_note: String::new(),
    })
}
