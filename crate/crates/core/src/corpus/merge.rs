use std::collections::{BTreeMap, HashSet};

use sha2::{Digest, Sha256};

use super::{
    AttachmentRegistry, CategoryTag, CorpusError, DocId, KnowledgeDoc, RegistryEntry,
    FORMAT_VERSION,
};

const SEPARATOR_PREFIX: &str = "=== source: ";
const SEPARATOR_SUFFIX: &str = " ===";

/// Separator line written ahead of each source body in a consolidated file.
pub fn separator_line(title: &str) -> String {
    format!("{SEPARATOR_PREFIX}{title}{SEPARATOR_SUFFIX}")
}

pub fn is_separator_line(line: &str) -> bool {
    line.starts_with(SEPARATOR_PREFIX) && line.ends_with(SEPARATOR_SUFFIX)
}

struct Slot {
    group: Option<CategoryTag>,
    docs: Vec<KnowledgeDoc>,
}

/// Consolidates `docs` into at most `max_attachments` attachments.
///
/// Documents are grouped by primary tag. While the registry is over the
/// limit, the group holding the most attachments (earliest group on ties)
/// folds its last attachment into the one before it. A single-source
/// attachment keeps the original document untouched.
pub fn merge_documents(
    docs: Vec<KnowledgeDoc>,
    max_attachments: usize,
) -> Result<AttachmentRegistry, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::NoDocuments);
    }
    if max_attachments == 0 {
        return Err(CorpusError::ZeroLimit);
    }
    let mut seen = HashSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId(d.doc_id.clone()));
        }
    }

    let mut group_order: Vec<Option<CategoryTag>> = Vec::new();
    for d in &docs {
        let g = d.primary_tag().cloned();
        if !group_order.contains(&g) {
            group_order.push(g);
        }
    }
    if group_order.len() > max_attachments {
        return Err(CorpusError::LimitInfeasible {
            categories: group_order.len(),
            max: max_attachments,
        });
    }

    let mut slots: Vec<Slot> = docs
        .into_iter()
        .map(|d| Slot {
            group: d.primary_tag().cloned(),
            docs: vec![d],
        })
        .collect();

    while slots.len() > max_attachments {
        let target = group_order
            .iter()
            .max_by_key(|g| {
                let count = slots.iter().filter(|s| &s.group == *g).count();
                // ties go to the earliest group
                let pos = group_order.iter().position(|x| x == *g).unwrap_or(0);
                (count, std::cmp::Reverse(pos))
            })
            .cloned()
            .expect("at least one group");
        let members: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.group == target)
            .map(|(i, _)| i)
            .collect();
        // the feasibility check guarantees some group still has two slots
        let (&keep, &fold) = (&members[members.len() - 2], &members[members.len() - 1]);
        let folded = slots.remove(fold);
        slots[keep].docs.extend(folded.docs);
    }

    let mut entries = Vec::with_capacity(slots.len());
    let mut table = BTreeMap::new();
    let mut routing: BTreeMap<CategoryTag, Vec<DocId>> = BTreeMap::new();
    for (i, slot) in slots.into_iter().enumerate() {
        let doc = consolidate(slot.docs);
        entries.push(RegistryEntry {
            ordinal: (i + 1) as u32,
            doc_id: doc.doc_id.clone(),
        });
        for tag in &doc.category_tags {
            routing.entry(tag.clone()).or_default().push(doc.doc_id.clone());
        }
        if table.insert(doc.doc_id.clone(), doc).is_some() {
            unreachable!("consolidated ids derive from unique member ids");
        }
    }

    Ok(AttachmentRegistry {
        format_version: FORMAT_VERSION,
        max_attachments,
        entries,
        routing,
        docs: table,
    })
}

fn consolidate(mut docs: Vec<KnowledgeDoc>) -> KnowledgeDoc {
    if docs.len() == 1 {
        return docs.pop().unwrap();
    }
    let mut hasher = Sha256::new();
    let mut tags: Vec<CategoryTag> = Vec::new();
    let mut parts = Vec::with_capacity(docs.len());
    let mut notes = Vec::new();
    for d in &docs {
        hasher.update(d.doc_id.as_str().as_bytes());
        hasher.update([0u8]);
        for t in &d.category_tags {
            if !tags.contains(t) {
                tags.push(t.clone());
            }
        }
        parts.push(format!("{}\n{}", separator_line(&d.title), d.body));
        if !d.source_note.is_empty() {
            notes.push(d.source_note.clone());
        }
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let body = parts.join("\n");
    KnowledgeDoc {
        doc_id: DocId::new(format!("merged-{hex}")),
        title: docs.iter().map(|d| d.title.as_str()).collect::<Vec<_>>().join(" + "),
        category_tags: tags,
        char_count: body.chars().count(),
        body,
        source_note: notes.join("; "),
    }
}
