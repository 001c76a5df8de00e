use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{AttachmentRegistry, DocId, RetrievalHit, FORMAT_VERSION};
use crate::text::{ceil_char_boundary, floor_char_boundary, is_cjk};

/// A token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace and punctuation. Alphanumeric runs become lowercase
/// word tokens; CJK runs contribute every character as a unigram and every
/// adjacent pair as a bigram.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut cjk_run: Vec<(usize, char)> = Vec::new();

    fn flush_cjk(run: &mut Vec<(usize, char)>, tokens: &mut Vec<Token>) {
        for (i, &(pos, c)) in run.iter().enumerate() {
            tokens.push(Token {
                term: c.to_string(),
                start: pos,
                end: pos + c.len_utf8(),
            });
            if let Some(&(npos, nc)) = run.get(i + 1) {
                tokens.push(Token {
                    term: format!("{c}{nc}"),
                    start: pos,
                    end: npos + nc.len_utf8(),
                });
            }
        }
        run.clear();
    }

    for (pos, c) in text.char_indices() {
        if is_cjk(c) {
            if let Some(s) = word_start.take() {
                tokens.push(word_token(text, s, pos));
            }
            cjk_run.push((pos, c));
        } else if c.is_alphanumeric() {
            flush_cjk(&mut cjk_run, &mut tokens);
            word_start.get_or_insert(pos);
        } else {
            flush_cjk(&mut cjk_run, &mut tokens);
            if let Some(s) = word_start.take() {
                tokens.push(word_token(text, s, pos));
            }
        }
    }
    flush_cjk(&mut cjk_run, &mut tokens);
    if let Some(s) = word_start {
        tokens.push(word_token(text, s, text.len()));
    }
    tokens
}

fn word_token(text: &str, start: usize, end: usize) -> Token {
    Token {
        term: text[start..end].to_lowercase(),
        start,
        end,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the document in the index's document table.
    pub doc: u32,
    pub tf: u32,
    /// Byte span of the first occurrence.
    pub first: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexedDoc {
    doc_id: DocId,
    title: String,
    body: String,
    length: u32,
}

/// Immutable term → postings index over every attachment body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalIndex {
    pub format_version: u32,
    pub params: Bm25Params,
    docs: Vec<IndexedDoc>,
    postings: BTreeMap<String, Vec<Posting>>,
    avg_len: f64,
}

const SNIPPET_BEFORE: usize = 80;
const SNIPPET_AFTER: usize = 240;

impl LexicalIndex {
    pub fn build(registry: &AttachmentRegistry) -> Self {
        Self::build_with(registry, Bm25Params::default())
    }

    pub fn build_with(registry: &AttachmentRegistry, params: Bm25Params) -> Self {
        let mut docs = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (i, doc) in registry.ordered_docs().enumerate() {
            let tokens = tokenize(&doc.body);
            let mut per_term: BTreeMap<&str, Posting> = BTreeMap::new();
            for t in &tokens {
                per_term
                    .entry(t.term.as_str())
                    .and_modify(|p| p.tf += 1)
                    .or_insert(Posting {
                        doc: i as u32,
                        tf: 1,
                        first: (t.start, t.end),
                    });
            }
            for (term, p) in per_term {
                postings.entry(term.to_string()).or_default().push(p);
            }
            docs.push(IndexedDoc {
                doc_id: doc.doc_id.clone(),
                title: doc.title.clone(),
                body: doc.body.clone(),
                length: tokens.len() as u32,
            });
        }
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            docs.iter().map(|d| d.length as f64).sum::<f64>() / docs.len() as f64
        };
        Self {
            format_version: FORMAT_VERSION,
            params,
            docs,
            postings,
            avg_len,
        }
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn body(&self, id: &DocId) -> Option<&str> {
        self.docs.iter().find(|d| &d.doc_id == id).map(|d| d.body.as_str())
    }

    /// BM25 score of every document containing at least one query term.
    ///
    /// `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`, and each distinct
    /// query term contributes `idf · tf·(k1+1) / (tf + k1·(1 - b + b·len/avg))`.
    pub fn score_all(&self, query: &str) -> BTreeMap<u32, f64> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().map(|t| t.term).collect();
        let n = self.docs.len() as f64;
        let Bm25Params { k1, b } = self.params;
        let mut scores = BTreeMap::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for p in list {
                let len = self.docs[p.doc as usize].length as f64;
                let tf = p.tf as f64;
                let norm = tf + k1 * (1.0 - b + b * len / self.avg_len);
                *scores.entry(p.doc).or_insert(0.0) += idf * tf * (k1 + 1.0) / norm;
            }
        }
        scores
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievalHit> {
        self.retrieve_within(query, k, None)
    }

    /// Like [`retrieve`](Self::retrieve) but restricted to the given documents.
    pub fn retrieve_within(
        &self,
        query: &str,
        k: usize,
        only: Option<&HashSet<DocId>>,
    ) -> Vec<RetrievalHit> {
        if k == 0 {
            return Vec::new();
        }
        let terms: BTreeSet<String> = tokenize(query).into_iter().map(|t| t.term).collect();
        let mut hits: Vec<RetrievalHit> = self
            .score_all(query)
            .into_iter()
            .filter(|(doc, _)| only.is_none_or(|set| set.contains(&self.docs[*doc as usize].doc_id)))
            .map(|(doc, score)| {
                let first = terms
                    .iter()
                    .filter_map(|t| self.postings(t).iter().find(|p| p.doc == doc))
                    .map(|p| p.first)
                    .min()
                    .expect("scored documents contain a query term");
                self.hit(doc as usize, first, score)
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
                .then_with(|| a.span.0.cmp(&b.span.0))
        });
        hits.truncate(k);
        hits
    }

    /// Leading passage of a document, used when routing names a document
    /// but the query has no lexical overlap with it.
    pub fn lead_passage(&self, id: &DocId) -> Option<RetrievalHit> {
        let pos = self.docs.iter().position(|d| &d.doc_id == id)?;
        Some(self.hit(pos, (0, 0), 0.0))
    }

    fn hit(&self, doc: usize, (start, end): (usize, usize), score: f64) -> RetrievalHit {
        let d = &self.docs[doc];
        let mut s = floor_char_boundary(&d.body, start.saturating_sub(SNIPPET_BEFORE));
        let mut e = ceil_char_boundary(&d.body, end + SNIPPET_AFTER);
        // Trim partial words at either edge; unspaced scripts are left as cut.
        if s > 0 && !d.body[..s].ends_with(char::is_whitespace) {
            if let Some((ws, c)) = d.body[s..start].char_indices().find(|(_, c)| c.is_whitespace()) {
                s += ws + c.len_utf8();
            }
        }
        if e < d.body.len() && !d.body[e..].starts_with(char::is_whitespace) {
            if let Some(ws) = d.body[end..e].rfind(char::is_whitespace) {
                e = end + ws;
            }
        }
        RetrievalHit {
            doc_id: d.doc_id.clone(),
            title: d.title.clone(),
            span: (s, e),
            score,
            snippet: d.body[s..e].to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_document, merge_documents, CategoryTag, StripPatterns};

    fn registry(bodies: &[(&str, &str)]) -> AttachmentRegistry {
        let docs = bodies
            .iter()
            .enumerate()
            .map(|(i, (title, body))| {
                ingest_document(body, title, &[CategoryTag::new(format!("t{i}"))], &StripPatterns::none())
                    .unwrap()
            })
            .collect();
        merge_documents(docs, 20).unwrap()
    }

    #[test]
    fn tokenizer_words_and_cjk_ngrams() {
        let toks: Vec<String> = tokenize("Yin-Yang 阴阳学说!").into_iter().map(|t| t.term).collect();
        assert_eq!(toks, vec!["yin", "yang", "阴", "阴阳", "阳", "阳学", "学", "学说", "说"]);
    }

    #[test]
    fn token_spans_point_into_text() {
        let text = "Qi 气血 flows";
        for t in tokenize(text) {
            assert_eq!(text[t.start..t.end].to_lowercase(), t.term);
        }
    }

    #[test]
    fn single_occurrence_has_one_posting() {
        let reg = registry(&[("a", "spleen qi rises")]);
        let idx = LexicalIndex::build(&reg);
        assert_eq!(idx.postings("spleen").len(), 1);
        assert!(idx.postings("kidney").is_empty());
    }

    #[test]
    fn sole_matching_doc_is_sole_hit() {
        let reg = registry(&[("a", "liver wood"), ("b", "kidney water"), ("c", "heart fire")]);
        let idx = LexicalIndex::build(&reg);
        let hits = idx.retrieve("kidney", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].title, "b");
        assert!(idx.retrieve("kidney", 1).len() <= 1);
    }

    #[test]
    fn snippet_is_substring_of_body() {
        let long = format!("{} 脾胃 {}", "x ".repeat(200), "y ".repeat(200));
        let reg = registry(&[("a", &long)]);
        let idx = LexicalIndex::build(&reg);
        let hit = &idx.retrieve("脾胃", 3)[0];
        let body = idx.body(&hit.doc_id).unwrap();
        assert_eq!(&body[hit.span.0..hit.span.1], hit.snippet);
        assert!(hit.snippet.contains("脾胃"));
    }

    #[test]
    fn serde_round_trip() {
        let reg = registry(&[("a", "liver wood"), ("b", "kidney water")]);
        let idx = LexicalIndex::build(&reg);
        let json = serde_json::to_string(&idx).unwrap();
        let back: LexicalIndex = serde_json::from_str(&json).unwrap();
        assert_eq!(back, idx);
    }
}
