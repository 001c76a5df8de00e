//! Knowledge-base ingestion, consolidation and lexical retrieval.
//!
//! Raw extracted text goes through [`ingest_document`], which strips
//! configured boilerplate regions (prefaces, acknowledgments, publication
//! notes). [`merge_documents`] consolidates documents that share a primary
//! category until the attachment limit is met and produces an
//! [`AttachmentRegistry`] that routes category tags to attachments.
//! [`LexicalIndex`] provides BM25 ranking over the consolidated bodies for
//! queries that no routing entry covers.

mod clean;
mod index;
mod manifest;
mod merge;
mod store;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clean::{ingest_document, StripPatterns, DEFAULT_STRIP_PATTERNS};
pub use index::{tokenize, Bm25Params, LexicalIndex, Posting, Token};
pub use manifest::{ingest_manifest, IngestSummary, Manifest, ManifestFile};
pub use merge::{is_separator_line, merge_documents, separator_line};
pub use store::Corpus;

/// Version stamped into every registry and index file.
pub const FORMAT_VERSION: u32 = 1;

/// Default attachment limit of the knowledge interface.
pub const DEFAULT_MAX_ATTACHMENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryTag(String);

impl CategoryTag {
    pub fn new(tag: impl Into<String>) -> Self {
        Self(tag.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CategoryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CategoryTag {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(String);

impl DocId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A cleaned corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub doc_id: DocId,
    pub title: String,
    /// Ordered and duplicate-free; the first tag is the primary category.
    pub category_tags: Vec<CategoryTag>,
    pub body: String,
    pub source_note: String,
    /// Length of `body` in characters.
    pub char_count: usize,
}

impl KnowledgeDoc {
    pub fn primary_tag(&self) -> Option<&CategoryTag> {
        self.category_tags.first()
    }

    pub fn with_source_note(mut self, note: impl Into<String>) -> Self {
        self.source_note = note.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub ordinal: u32,
    pub doc_id: DocId,
}

/// Consolidated attachments plus the category routing table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachmentRegistry {
    pub format_version: u32,
    pub max_attachments: usize,
    pub entries: Vec<RegistryEntry>,
    pub routing: BTreeMap<CategoryTag, Vec<DocId>>,
    pub docs: BTreeMap<DocId, KnowledgeDoc>,
}

impl AttachmentRegistry {
    pub fn doc(&self, id: &DocId) -> Option<&KnowledgeDoc> {
        self.docs.get(id)
    }

    /// Documents in attachment order.
    pub fn ordered_docs(&self) -> impl Iterator<Item = &KnowledgeDoc> {
        self.entries.iter().filter_map(|e| self.docs.get(&e.doc_id))
    }

    /// Routing entry for `tag`; empty when the tag is unmapped.
    pub fn route_category(&self, tag: &CategoryTag) -> Vec<DocId> {
        self.routing.get(tag).cloned().unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks the structural invariants; used when loading from disk.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InvalidRegistry(msg));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if self.entries.len() > self.max_attachments {
            return bad(format!(
                "{} entries exceed max_attachments {}",
                self.entries.len(),
                self.max_attachments
            ));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.ordinal as usize != i + 1 {
                return bad(format!("ordinal {} at position {}", e.ordinal, i + 1));
            }
            let Some(doc) = self.docs.get(&e.doc_id) else {
                return bad(format!("entry {} references missing doc {}", e.ordinal, e.doc_id));
            };
            if doc.char_count != doc.body.chars().count() {
                return bad(format!("char_count mismatch for {}", e.doc_id));
            }
        }
        if self.docs.len() != self.entries.len() {
            return bad("docs table and entries disagree".into());
        }
        for (tag, ids) in &self.routing {
            for id in ids {
                if !self.entries.iter().any(|e| &e.doc_id == id) {
                    return bad(format!("routing for {tag} references unknown doc {id}"));
                }
            }
        }
        Ok(())
    }
}

/// A ranked passage from the lexical index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: DocId,
    pub title: String,
    /// Byte offsets into the document body.
    pub span: (usize, usize),
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document '{0}' is empty after whitespace normalization")]
    EmptyInput(String),
    #[error("document '{0}' is empty after stripping boilerplate")]
    EmptyAfterCleaning(String),
    #[error("invalid strip pattern '{pattern}': {source}")]
    BadPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("no documents to merge")]
    NoDocuments,
    #[error("max_attachments must be positive")]
    ZeroLimit,
    #[error("{categories} distinct categories cannot fit in {max} attachments")]
    LimitInfeasible { categories: usize, max: usize },
    #[error("duplicate document id {0}")]
    DuplicateDocId(DocId),
    #[error("invalid registry: {0}")]
    InvalidRegistry(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
