//! Query workflow: embed a new ticket, gather dense (and optionally sparse)
//! candidates per partition, re-rank them, and expand ticket hits into their
//! linked pull requests.
//!
//! Scoring for each pooled candidate:
//!
//! ```text
//! final = base * temporal * (1 + boost) + overlap_weight * overlap
//! ```
//!
//! `base` is the dense cosine when hybrid retrieval is off. With hybrid on it
//! is the reciprocal-rank-fusion score min-max normalized over the whole pool.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{clean_text, extract_issue_keys, ArtifactChunk, CleaningConfig, LinkEdge, Partition};
use crate::embedding::{EmbedError, Embedder, EmbeddingStore};
use crate::exec::Execution;
use crate::index::{kernel, IndexConfig, IndexError, IndexKind, SearchHit, VectorIndex};
use crate::lexical::{tokenize, Bm25Params, LexicalIndex};

pub const RRF_C: f64 = 60.0;
pub const DEFAULT_FEEDBACK_BETA: f64 = 0.2;
pub const DEFAULT_OVERLAP_WEIGHT: f64 = 0.25;
const KEY_BONUS: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("stale index: built with {index}, query embedder is {embedder}")]
    StaleIndex { index: String, embedder: String },
    #[error("query text is empty")]
    EmptyQuery,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub enabled: bool,
    pub half_life_days: f64,
    pub floor: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig { enabled: true, half_life_days: 180.0, floor: 0.5 }
    }
}

impl TemporalConfig {
    pub fn disabled() -> Self {
        TemporalConfig { enabled: false, ..Self::default() }
    }
}

/// Knobs of the re-ranking formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringWeights {
    pub overlap: f64,
    pub feedback_beta: f64,
    pub rrf_c: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        ScoringWeights { overlap: DEFAULT_OVERLAP_WEIGHT, feedback_beta: DEFAULT_FEEDBACK_BETA, rrf_c: RRF_C }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub text: String,
    pub k_per_partition: usize,
    pub k_final: usize,
    pub hybrid: bool,
    pub temporal: TemporalConfig,
    pub now: DateTime<Utc>,
    #[serde(default)]
    pub weights: ScoringWeights,
}

impl QuerySpec {
    /// Defaults: 5 per partition, 8 overall, hybrid on, 180-day half-life
    /// with a 0.5 floor. `text` is cleaned like ticket text.
    pub fn new(text: &str, now: DateTime<Utc>) -> Self {
        QuerySpec {
            text: clean_text(text, &CleaningConfig::default()),
            k_per_partition: 5,
            k_final: 8,
            hybrid: true,
            temporal: TemporalConfig::default(),
            now,
            weights: ScoringWeights::default(),
        }
    }

    /// Query for a ticket, built from its title and description.
    pub fn for_ticket(title: &str, description: &str, now: DateTime<Utc>) -> Self {
        Self::new(&format!("{title}\n{description}"), now)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.text.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let bad = |m: &str| Err(RetrievalError::InvalidQuery(m.to_owned()));
        if self.k_per_partition == 0 || self.k_final == 0 {
            return bad("k_per_partition and k_final must be positive");
        }
        if self.k_final > self.k_per_partition * Partition::ALL.len() {
            return bad("k_final exceeds the sum of partition budgets");
        }
        let t = &self.temporal;
        if t.enabled && (t.half_life_days.is_nan() || t.half_life_days <= 0.0) {
            return bad("half_life_days must be positive");
        }
        if !(0.0..=1.0).contains(&t.floor) {
            return bad("temporal floor must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub chunk_id: String,
    pub partition: Partition,
    pub source_key: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    pub dense_score: f64,
    pub sparse_rank: Option<usize>,
    pub overlap: f64,
    pub temporal_multiplier: f64,
    pub feedback_boost: f64,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkedPr {
    pub ticket_key: String,
    pub pr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub query: QuerySpec,
    pub hits: Vec<RankedHit>,
    pub linked_prs: Vec<LinkedPr>,
    pub retrieved_at: DateTime<Utc>,
}

impl EvidenceBundle {
    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn hit(&self, chunk_id: &str) -> Option<&RankedHit> {
        self.hits.iter().find(|h| h.chunk_id == chunk_id)
    }
}

/// Accept and reject counts attributed to one chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChunkFeedback {
    pub accepts: u32,
    pub rejects: u32,
}

pub type FeedbackStats = HashMap<String, ChunkFeedback>;

/// `beta * (accepts - rejects) / (accepts + rejects + 1)`.
pub fn feedback_boost(fb: ChunkFeedback, beta: f64) -> f64 {
    let (a, r) = (f64::from(fb.accepts), f64::from(fb.rejects));
    beta * (a - r) / (a + r + 1.0)
}

pub fn apply_feedback_boost(stats: &FeedbackStats, beta: f64) -> HashMap<String, f64> {
    stats.iter().map(|(id, fb)| (id.clone(), feedback_boost(*fb, beta))).collect()
}

/// `base * temporal * (1 + boost) + overlap_weight * overlap`.
pub fn combine_score(base: f64, temporal: f64, boost: f64, overlap: f64, overlap_weight: f64) -> f64 {
    base * temporal * (1.0 + boost) + overlap_weight * overlap
}

/// `floor + (1 - floor) * 2^(-age / half_life)`.
pub fn temporal_multiplier(age_days: f64, half_life_days: f64, floor: f64) -> f64 {
    floor + (1.0 - floor) * (-age_days.max(0.0) / half_life_days).exp2()
}

fn keys_of(text: &str) -> HashSet<String> {
    // Cleaned text is lowercased, so keys are matched on an uppercased copy.
    extract_issue_keys(&text.to_uppercase()).into_iter().collect()
}

/// Jaccard similarity of the two texts' token sets, plus a bonus of 0.2 when
/// they mention a common issue key, capped at 1. Texts without tokens have
/// zero Jaccard similarity.
pub fn contextual_overlap(query_text: &str, chunk_text: &str) -> f64 {
    let a: HashSet<String> = tokenize(query_text).into_iter().collect();
    let b: HashSet<String> = tokenize(chunk_text).into_iter().collect();
    let union = a.union(&b).count();
    let jaccard = if union == 0 { 0.0 } else { a.intersection(&b).count() as f64 / union as f64 };
    let bonus = if keys_of(query_text).is_disjoint(&keys_of(chunk_text)) { 0.0 } else { KEY_BONUS };
    (jaccard + bonus).min(1.0)
}

/// One entry of a fused ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedHit {
    pub chunk_id: String,
    pub rrf: f64,
    pub dense_rank: Option<usize>,
    pub sparse_rank: Option<usize>,
}

/// 1-based competition ranks: equal scores share the best rank of the group.
fn competition_ranks(hits: &[SearchHit]) -> Vec<usize> {
    let mut ranks = Vec::with_capacity(hits.len());
    for (i, h) in hits.iter().enumerate() {
        if i > 0 && h.score == hits[i - 1].score {
            ranks.push(ranks[i - 1]);
        } else {
            ranks.push(i + 1);
        }
    }
    ranks
}

/// Reciprocal rank fusion of two rankings, each ordered best first.
/// Sorted by `(rrf desc, chunk_id asc)`.
pub fn fuse_hybrid(dense: &[SearchHit], sparse: &[SearchHit], c: f64) -> Vec<FusedHit> {
    let mut fused: BTreeMap<&str, FusedHit> = BTreeMap::new();
    for (hits, is_dense) in [(dense, true), (sparse, false)] {
        for (h, rank) in hits.iter().zip(competition_ranks(hits)) {
            let e = fused.entry(h.chunk_id.as_str()).or_insert_with(|| FusedHit {
                chunk_id: h.chunk_id.clone(),
                rrf: 0.0,
                dense_rank: None,
                sparse_rank: None,
            });
            e.rrf += 1.0 / (c + rank as f64);
            if is_dense {
                e.dense_rank = Some(rank);
            } else {
                e.sparse_rank = Some(rank);
            }
        }
    }
    let mut out: Vec<FusedHit> = fused.into_values().collect();
    out.sort_by(|a, b| b.rrf.total_cmp(&a.rrf).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    out
}

/// One dense index per partition, all built from the same embedding model.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndexSet {
    pub model_version: String,
    pub partitions: BTreeMap<Partition, VectorIndex>,
}

impl DenseIndexSet {
    /// Builds every partition from `store` with `config` as the template.
    /// IVF `nlist` is clamped to the partition size, and empty partitions get
    /// an empty flat index.
    pub fn build(store: &EmbeddingStore, config: IndexConfig, exec: Execution) -> Result<Self, IndexError> {
        let mut partitions = BTreeMap::new();
        for p in Partition::ALL {
            let records: Vec<_> = store.partition(p).collect();
            let mut cfg = config;
            cfg.dimension = store.dimension();
            if records.is_empty() && cfg.kind == IndexKind::Ivf {
                cfg.kind = IndexKind::Flat;
            }
            if cfg.kind == IndexKind::Ivf && cfg.ivf.nlist > records.len() {
                cfg.ivf.nlist = records.len();
                cfg.ivf.nprobe = cfg.ivf.nprobe.min(records.len());
            }
            let idx = VectorIndex::build(
                records.iter().map(|r| (r.chunk_id.as_str(), r.vector.as_slice())),
                cfg,
                exec,
            )?;
            partitions.insert(p, idx);
        }
        Ok(DenseIndexSet { model_version: store.model_version().to_owned(), partitions })
    }

    pub fn get(&self, p: Partition) -> Option<&VectorIndex> {
        self.partitions.get(&p)
    }

    pub fn len(&self) -> usize {
        self.partitions.values().map(VectorIndex::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One BM25 index per partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalIndexSet {
    pub partitions: BTreeMap<Partition, LexicalIndex>,
}

impl LexicalIndexSet {
    pub fn build(chunks: &[ArtifactChunk], params: Bm25Params) -> Self {
        let partitions = Partition::ALL
            .into_iter()
            .map(|p| {
                let docs = chunks.iter().filter(|c| c.partition == p).map(|c| (c.chunk_id.as_str(), c.text.as_str()));
                (p, LexicalIndex::build_texts(docs, params))
            })
            .collect();
        LexicalIndexSet { partitions }
    }

    pub fn get(&self, p: Partition) -> Option<&LexicalIndex> {
        self.partitions.get(&p)
    }
}

/// Everything a query needs besides the embedder and the feedback snapshot.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    chunks: HashMap<String, ArtifactChunk>,
    links: Vec<LinkEdge>,
    dense: DenseIndexSet,
    lexical: LexicalIndexSet,
}

impl KnowledgeBase {
    pub fn build(
        chunks: &[ArtifactChunk],
        links: &[LinkEdge],
        store: &EmbeddingStore,
        config: IndexConfig,
        bm25: Bm25Params,
        exec: Execution,
    ) -> Result<Self, IndexError> {
        let dense = DenseIndexSet::build(store, config, exec)?;
        let lexical = LexicalIndexSet::build(chunks, bm25);
        Ok(Self::from_parts(chunks.to_vec(), links.to_vec(), dense, lexical))
    }

    pub fn from_parts(chunks: Vec<ArtifactChunk>, links: Vec<LinkEdge>, dense: DenseIndexSet, lexical: LexicalIndexSet) -> Self {
        let chunks = chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect();
        KnowledgeBase { chunks, links, dense, lexical }
    }

    pub fn dense(&self) -> &DenseIndexSet {
        &self.dense
    }

    pub fn lexical(&self) -> &LexicalIndexSet {
        &self.lexical
    }

    pub fn links(&self) -> &[LinkEdge] {
        &self.links
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&ArtifactChunk> {
        self.chunks.get(chunk_id)
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    /// Checks that every indexed id resolves to a chunk of the same partition.
    pub fn validate(&self) -> Result<(), String> {
        for (p, idx) in &self.dense.partitions {
            for id in idx.ids() {
                match self.chunks.get(id) {
                    Some(c) if c.partition == *p => {}
                    Some(_) => return Err(format!("{id} is indexed under the wrong partition {p}")),
                    None => return Err(format!("indexed id {id} has no chunk")),
                }
            }
        }
        Ok(())
    }
}

struct PoolEntry<'a> {
    chunk: &'a ArtifactChunk,
    dense_score: f64,
    sparse_rank: Option<usize>,
    rrf: f64,
}

/// Runs one query against `kb`. `feedback` is read once; later updates do not
/// affect this call.
pub fn retrieve(
    query: &QuerySpec,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    feedback: &FeedbackStats,
) -> Result<EvidenceBundle, RetrievalError> {
    query.validate()?;
    let model = &embedder.spec().model_version;
    if *model != kb.dense.model_version {
        return Err(RetrievalError::StaleIndex { index: kb.dense.model_version.clone(), embedder: model.clone() });
    }
    let qv = embedder.embed(&query.text)?;
    let k = query.k_per_partition;

    let mut pool: Vec<PoolEntry<'_>> = Vec::new();
    for (&p, index) in &kb.dense.partitions {
        if index.is_empty() {
            continue;
        }
        let dense = index.search(&qv, k)?;
        if query.hybrid {
            let sparse = kb.lexical.get(p).map(|l| l.search(&query.text, 3 * k)).unwrap_or_default();
            let dense_scores: HashMap<&str, f64> = dense.iter().map(|h| (h.chunk_id.as_str(), h.score)).collect();
            for f in fuse_hybrid(&dense, &sparse, query.weights.rrf_c).into_iter().take(k) {
                let Some(chunk) = kb.chunks.get(&f.chunk_id) else { continue };
                let dense_score = match dense_scores.get(f.chunk_id.as_str()) {
                    Some(&s) => s,
                    None => index.vector(&f.chunk_id).map_or(0.0, |v| kernel::dot(&qv, v)),
                };
                pool.push(PoolEntry { chunk, dense_score, sparse_rank: f.sparse_rank, rrf: f.rrf });
            }
        } else {
            for h in dense {
                let Some(chunk) = kb.chunks.get(&h.chunk_id) else { continue };
                pool.push(PoolEntry { chunk, dense_score: h.score, sparse_rank: None, rrf: 0.0 });
            }
        }
    }

    let (lo, hi) = pool.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.rrf), hi.max(e.rrf)));
    let w = query.weights;
    let mut hits: Vec<RankedHit> = pool
        .into_iter()
        .map(|e| {
            let base = if !query.hybrid {
                e.dense_score
            } else if hi > lo {
                (e.rrf - lo) / (hi - lo)
            } else {
                1.0
            };
            let temporal = if query.temporal.enabled {
                let age_days = (query.now - e.chunk.timestamp).num_milliseconds() as f64 / 86_400_000.0;
                temporal_multiplier(age_days, query.temporal.half_life_days, query.temporal.floor)
            } else {
                1.0
            };
            let boost = feedback.get(&e.chunk.chunk_id).map_or(0.0, |fb| feedback_boost(*fb, w.feedback_beta));
            let overlap = contextual_overlap(&query.text, &e.chunk.text);
            RankedHit {
                chunk_id: e.chunk.chunk_id.clone(),
                partition: e.chunk.partition,
                source_key: e.chunk.source_key.clone(),
                text: e.chunk.text.clone(),
                timestamp: e.chunk.timestamp,
                dense_score: e.dense_score,
                sparse_rank: e.sparse_rank,
                overlap,
                temporal_multiplier: temporal,
                feedback_boost: boost,
                final_score: combine_score(base, temporal, boost, overlap, w.overlap),
            }
        })
        .collect();
    hits.sort_by(|a, b| b.final_score.total_cmp(&a.final_score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    hits.truncate(query.k_final);

    let mut linked = BTreeSet::new();
    for h in hits.iter().filter(|h| h.partition == Partition::Ticket) {
        for e in kb.links.iter().filter(|e| e.ticket_key == h.source_key) {
            linked.insert(LinkedPr { ticket_key: e.ticket_key.clone(), pr: e.pr_id().to_string() });
        }
    }

    Ok(EvidenceBundle { query: query.clone(), hits, linked_prs: linked.into_iter().collect(), retrieved_at: query.now })
}
