//! BM25 inverted index over chunk text.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::ArtifactChunk;
use crate::index::kernel::{Candidate, TopK};
use crate::index::SearchHit;

/// Words dropped by [`tokenize`].
pub const STOPWORDS: [&str; 30] = [
    "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it", "of", "on", "or", "such",
    "that", "the", "their", "then", "there", "these", "they", "this", "to", "was", "will", "with",
];

/// Lowercases, splits on non-alphanumerics, and drops single-character
/// tokens and stopwords. Order and repeats are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().nth(1).is_some() && !STOPWORDS.contains(t))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, positive for every `df <= N`.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturating term-frequency component of BM25.
pub fn tf_weight(tf: f64, doc_len: f64, avg_len: f64, p: Bm25Params) -> f64 {
    let norm = if avg_len > 0.0 { doc_len / avg_len } else { 0.0 };
    tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalIndex {
    params: Bm25Params,
    /// Document ids, ascending; a document's position doubles as its tie-break rank.
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// term -> (doc position, term frequency), ascending by position.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl LexicalIndex {
    pub fn build(chunks: &[ArtifactChunk], params: Bm25Params) -> Self {
        Self::build_texts(chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())), params)
    }

    /// Builds over `(chunk_id, text)` pairs. A repeated id keeps its first text.
    pub fn build_texts<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>, params: Bm25Params) -> Self {
        let mut docs: Vec<(&str, &str)> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.0.cmp(b.0));
        docs.dedup_by(|a, b| a.0 == b.0);

        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (pos, (_, text)) in docs.iter().enumerate() {
            let tokens = tokenize(text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((pos as u32, n));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        LexicalIndex {
            params,
            doc_ids: docs.into_iter().map(|(id, _)| id.to_owned()).collect(),
            doc_lengths,
            avg_doc_length,
            postings,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, chunk_id: &str) -> Option<u32> {
        self.position(chunk_id).map(|p| self.doc_lengths[p])
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `(chunk_id, tf)` pairs for `term`, ascending by chunk id.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|&(d, tf)| (self.doc_ids[d as usize].as_str(), tf)).collect())
            .unwrap_or_default()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    fn position(&self, chunk_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(chunk_id)).ok()
    }

    /// Top-`k` documents by BM25 over the distinct query terms, ordered by
    /// `(score desc, chunk_id asc)`. Documents matching no term are omitted.
    pub fn search(&self, query: &str, k: usize) -> Vec<SearchHit> {
        if k == 0 || self.doc_ids.is_empty() {
            return Vec::new();
        }
        let mut seen = HashSet::new();
        let mut scores = vec![0f64; self.doc_ids.len()];
        let mut touched: Vec<u32> = Vec::new();
        let n = self.doc_count();
        for term in tokenize(query) {
            if !seen.insert(term.clone()) {
                continue;
            }
            let Some(list) = self.postings.get(&term) else { continue };
            let w = idf(n, list.len());
            for &(d, tf) in list {
                let len = f64::from(self.doc_lengths[d as usize]);
                if scores[d as usize] == 0.0 {
                    touched.push(d);
                }
                scores[d as usize] += w * tf_weight(f64::from(tf), len, self.avg_doc_length, self.params);
            }
        }
        let mut top = TopK::new(k);
        for d in touched {
            top.push(Candidate { score: scores[d as usize], rank: d, slot: d });
        }
        top.into_sorted()
            .into_iter()
            .map(|c| SearchHit { chunk_id: self.doc_ids[c.slot as usize].clone(), score: c.score })
            .collect()
    }
}
