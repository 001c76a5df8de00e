use std::collections::HashSet;
use std::path::Path;

use super::{AttachmentRegistry, CategoryTag, CorpusError, DocId, LexicalIndex, RetrievalHit};

/// Registry and index loaded together, shared read-only at runtime.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub registry: AttachmentRegistry,
    pub index: LexicalIndex,
}

impl Corpus {
    pub fn new(registry: AttachmentRegistry) -> Self {
        let index = LexicalIndex::build(&registry);
        Self { registry, index }
    }

    /// Loads `registry.json` and `index.json` written by ingestion.
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let registry = AttachmentRegistry::load(&dir.join("registry.json"))?;
        let index = LexicalIndex::load(&dir.join("index.json"))?;
        Ok(Self { registry, index })
    }

    /// Retrieval scoped by category routing.
    ///
    /// Documents routed from `tags` are searched first. If none of them
    /// match the query, their leading passages are used; with no routed
    /// documents at all the whole index is searched.
    pub fn retrieve_routed(&self, tags: &[CategoryTag], query: &str, k: usize) -> Vec<RetrievalHit> {
        let mut routed: Vec<DocId> = Vec::new();
        for tag in tags {
            for id in self.registry.route_category(tag) {
                if !routed.contains(&id) {
                    routed.push(id);
                }
            }
        }
        if routed.is_empty() {
            return self.index.retrieve(query, k);
        }
        let scope: HashSet<DocId> = routed.iter().cloned().collect();
        let hits = self.index.retrieve_within(query, k, Some(&scope));
        if !hits.is_empty() {
            return hits;
        }
        routed.iter().filter_map(|id| self.index.lead_passage(id)).take(k).collect()
    }
}
