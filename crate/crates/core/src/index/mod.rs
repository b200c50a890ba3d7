//! Dense similarity search: exact Flat scan, IVF inverted lists over k-means
//! centroids, and an HNSW proximity graph, behind one [`VectorIndex`] type.
//!
//! All kinds share contiguous f32 storage and return hits ordered by
//! `(score desc, chunk_id asc)`. Under [`Metric::Cosine`] stored vectors must
//! be unit-norm and queries are normalized on the way in, so cosine is a plain
//! inner product.

mod hnsw;
mod ivf;
pub mod kernel;
mod persist;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingRecord;
use crate::exec::Execution;

pub use hnsw::HnswGraph;
pub use ivf::IvfLists;
pub use persist::{PersistError, FORMAT_VERSION, MAGIC};

use kernel::{dot, Candidate, TopK};

/// Tolerance on `|‖v‖ - 1|` for vectors entering a cosine index.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector for {id} is not unit-norm (norm {norm}) under the cosine metric")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("nlist too large: {nlist} lists for {count} records")]
    NlistTooLarge { nlist: usize, count: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("k must be positive")]
    ZeroK,
    #[error("invalid index config: {0}")]
    InvalidConfig(String),
    #[error("query vector has zero norm")]
    ZeroQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Flat,
    Ivf,
    Hnsw,
}

impl IndexKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Flat => "flat",
            IndexKind::Ivf => "ivf",
            IndexKind::Hnsw => "hnsw",
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat" => Ok(IndexKind::Flat),
            "ivf" => Ok(IndexKind::Ivf),
            "hnsw" => Ok(IndexKind::Hnsw),
            _ => Err(format!("unknown index kind {s:?} (expected flat, ivf or hnsw)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Dot,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "dot" => Ok(Metric::Dot),
            _ => Err(format!("unknown metric {s:?} (expected cosine or dot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvfParams {
    pub nlist: usize,
    pub nprobe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        IvfParams { nlist: 64, nprobe: 8, kmeans_iters: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams { m: 16, ef_construction: 200, ef_search: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub kind: IndexKind,
    pub metric: Metric,
    pub dimension: usize,
    #[serde(default)]
    pub ivf: IvfParams,
    #[serde(default)]
    pub hnsw: HnswParams,
}

impl IndexConfig {
    pub fn new(kind: IndexKind, metric: Metric, dimension: usize) -> Self {
        IndexConfig { kind, metric, dimension, ivf: IvfParams::default(), hnsw: HnswParams::default() }
    }

    pub fn flat(dimension: usize) -> Self {
        Self::new(IndexKind::Flat, Metric::Cosine, dimension)
    }

    pub fn ivf(dimension: usize, params: IvfParams) -> Self {
        IndexConfig { ivf: params, ..Self::new(IndexKind::Ivf, Metric::Cosine, dimension) }
    }

    pub fn hnsw(dimension: usize, params: HnswParams) -> Self {
        IndexConfig { hnsw: params, ..Self::new(IndexKind::Hnsw, Metric::Cosine, dimension) }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        let bad = |m: &str| Err(IndexError::InvalidConfig(m.to_owned()));
        if self.dimension == 0 {
            return bad("dimension must be positive");
        }
        match self.kind {
            IndexKind::Flat => Ok(()),
            IndexKind::Ivf => {
                let p = &self.ivf;
                if p.nlist == 0 || p.nprobe == 0 || p.kmeans_iters == 0 {
                    return bad("nlist, nprobe and kmeans_iters must be positive");
                }
                if p.nprobe > p.nlist {
                    return bad("nprobe must not exceed nlist");
                }
                Ok(())
            }
            IndexKind::Hnsw => {
                let p = &self.hnsw;
                if p.m < 2 {
                    return bad("M must be at least 2");
                }
                if p.ef_construction == 0 || p.ef_search == 0 {
                    return bad("ef_construction and ef_search must be positive");
                }
                Ok(())
            }
        }
    }
}

/// Per-query overrides of the configured search breadth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchParams {
    pub nprobe: Option<usize>,
    pub ef_search: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Structure {
    Flat,
    Ivf(IvfLists),
    Hnsw(HnswGraph),
}

/// Read-only view of stored vectors handed to the kind-specific code.
pub(crate) struct Storage<'a> {
    pub vectors: &'a [f32],
    pub dim: usize,
    pub ranks: &'a [u32],
}

impl<'a> Storage<'a> {
    #[inline]
    pub fn vector(&self, slot: u32) -> &'a [f32] {
        let s = slot as usize * self.dim;
        &self.vectors[s..s + self.dim]
    }

    #[inline]
    pub fn candidate(&self, query: &[f32], slot: u32) -> Candidate {
        Candidate { score: dot(query, self.vector(slot)), rank: self.ranks[slot as usize], slot }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    config: IndexConfig,
    ids: Vec<String>,
    vectors: Vec<f32>,
    /// Position of each slot in ascending chunk-id order.
    ranks: Vec<u32>,
    slots: HashMap<String, u32>,
    structure: Structure,
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.ids == other.ids
            && self.vectors.len() == other.vectors.len()
            && self.vectors.iter().zip(&other.vectors).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.structure == other.structure
    }
}

fn compute_ranks(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut ranks = vec![0u32; ids.len()];
    for (r, &slot) in order.iter().enumerate() {
        ranks[slot as usize] = r as u32;
    }
    ranks
}

impl VectorIndex {
    /// An empty index of the given configuration. IVF needs training data, so
    /// an empty IVF index is only reachable by building over at least `nlist`
    /// records.
    pub fn empty(config: IndexConfig) -> Result<Self, IndexError> {
        Self::build(std::iter::empty::<(&str, &[f32])>(), config, Execution::Sequential)
    }

    pub fn build_records(records: &[EmbeddingRecord], config: IndexConfig, exec: Execution) -> Result<Self, IndexError> {
        Self::build(records.iter().map(|r| (r.chunk_id.as_str(), r.vector.as_slice())), config, exec)
    }

    /// Builds an index over `(id, vector)` entries, in iteration order.
    pub fn build<'a, I>(entries: I, config: IndexConfig, exec: Execution) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (&'a str, &'a [f32])>,
    {
        config.validate()?;
        let mut index = VectorIndex {
            config,
            ids: Vec::new(),
            vectors: Vec::new(),
            ranks: Vec::new(),
            slots: HashMap::new(),
            structure: Structure::Flat,
        };
        for (id, v) in entries {
            index.push_entry(id, v)?;
        }
        index.ranks = compute_ranks(&index.ids);
        index.structure = match config.kind {
            IndexKind::Flat => Structure::Flat,
            IndexKind::Ivf => {
                if config.ivf.nlist > index.ids.len() {
                    return Err(IndexError::NlistTooLarge { nlist: config.ivf.nlist, count: index.ids.len() });
                }
                Structure::Ivf(IvfLists::train(&index.storage(), &config.ivf, exec, config.metric == Metric::Cosine))
            }
            IndexKind::Hnsw => {
                let mut g = HnswGraph::new(config.hnsw);
                let storage = Storage { vectors: &index.vectors, dim: config.dimension, ranks: &index.ranks };
                for slot in 0..index.ids.len() as u32 {
                    g.insert(&storage, slot);
                }
                Structure::Hnsw(g)
            }
        };
        Ok(index)
    }

    fn check_vector(&self, id: &str, v: &[f32]) -> Result<(), IndexError> {
        if v.len() != self.config.dimension {
            return Err(IndexError::DimensionMismatch { expected: self.config.dimension, actual: v.len() });
        }
        if self.config.metric == Metric::Cosine {
            let norm = kernel::squared_norm(v).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(IndexError::NotUnitNorm { id: id.to_owned(), norm });
            }
        }
        Ok(())
    }

    fn push_entry(&mut self, id: &str, v: &[f32]) -> Result<u32, IndexError> {
        self.check_vector(id, v)?;
        if self.slots.contains_key(id) {
            return Err(IndexError::DuplicateId(id.to_owned()));
        }
        let slot = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.vectors.extend_from_slice(v);
        self.slots.insert(id.to_owned(), slot);
        Ok(slot)
    }

    pub(crate) fn storage(&self) -> Storage<'_> {
        Storage { vectors: &self.vectors, dim: self.config.dimension, ranks: &self.ranks }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn kind(&self) -> IndexKind {
        self.config.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.slots.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.slots.get(id).map(|&s| self.storage().vector(s))
    }

    pub fn ivf_lists(&self) -> Option<&IvfLists> {
        match &self.structure {
            Structure::Ivf(l) => Some(l),
            _ => None,
        }
    }

    pub fn hnsw_graph(&self) -> Option<&HnswGraph> {
        match &self.structure {
            Structure::Hnsw(g) => Some(g),
            _ => None,
        }
    }

    /// Approximate resident size of vectors, ids and kind-specific structure.
    pub fn memory_bytes(&self) -> usize {
        let ids: usize = self.ids.iter().map(|s| s.len() + std::mem::size_of::<String>()).sum();
        let base = self.vectors.len() * 4 + ids + self.ranks.len() * 4 + self.slots.len() * 48;
        base + match &self.structure {
            Structure::Flat => 0,
            Structure::Ivf(l) => l.memory_bytes(),
            Structure::Hnsw(g) => g.memory_bytes(),
        }
    }

    /// Appends records. IVF centroids are not retrained; new vectors join the
    /// list of their nearest existing centroid.
    pub fn add(&mut self, records: &[EmbeddingRecord]) -> Result<usize, IndexError> {
        self.add_entries(records.iter().map(|r| (r.chunk_id.as_str(), r.vector.as_slice())))
    }

    pub fn add_entries<'a, I>(&mut self, entries: I) -> Result<usize, IndexError>
    where
        I: IntoIterator<Item = (&'a str, &'a [f32])>,
    {
        let entries: Vec<(&str, &[f32])> = entries.into_iter().collect();
        let mut batch = HashSet::new();
        for (id, v) in &entries {
            self.check_vector(id, v)?;
            if self.slots.contains_key(*id) || !batch.insert(*id) {
                return Err(IndexError::DuplicateId((*id).to_owned()));
            }
        }
        let first = self.ids.len() as u32;
        for (id, v) in &entries {
            self.push_entry(id, v)?;
        }
        self.ranks = compute_ranks(&self.ids);
        let last = self.ids.len() as u32;
        let storage = Storage { vectors: &self.vectors, dim: self.config.dimension, ranks: &self.ranks };
        match &mut self.structure {
            Structure::Flat => {}
            Structure::Ivf(lists) => {
                for slot in first..last {
                    lists.assign(&storage, slot);
                }
            }
            Structure::Hnsw(g) => {
                for slot in first..last {
                    g.insert(&storage, slot);
                }
            }
        }
        Ok(self.ids.len())
    }

    fn prepare_query(&self, query: &[f32]) -> Result<Vec<f32>, IndexError> {
        if query.len() != self.config.dimension {
            return Err(IndexError::DimensionMismatch { expected: self.config.dimension, actual: query.len() });
        }
        let mut q = query.to_vec();
        if self.config.metric == Metric::Cosine {
            let norm = kernel::squared_norm(&q).sqrt();
            if norm == 0.0 {
                return Err(IndexError::ZeroQuery);
            }
            for x in &mut q {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
        Ok(q)
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_with(query, k, SearchParams::default())
    }

    pub fn search_with(&self, query: &[f32], k: usize, params: SearchParams) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q = self.prepare_query(query)?;
        if self.ids.is_empty() {
            return Ok(Vec::new());
        }
        let storage = self.storage();
        let found = match &self.structure {
            Structure::Flat => {
                let mut top = TopK::new(k);
                for slot in 0..storage.len() as u32 {
                    top.push(storage.candidate(&q, slot));
                }
                top.into_sorted()
            }
            Structure::Ivf(lists) => {
                let nprobe = params.nprobe.unwrap_or(self.config.ivf.nprobe).clamp(1, lists.nlist());
                lists.search(&storage, &q, k, nprobe)
            }
            Structure::Hnsw(g) => {
                let ef = params.ef_search.unwrap_or(self.config.hnsw.ef_search).max(k);
                g.search(&storage, &q, k, ef)
            }
        };
        Ok(found
            .into_iter()
            .map(|c| SearchHit { chunk_id: self.ids[c.slot as usize].clone(), score: c.score })
            .collect())
    }

    /// Runs many queries, fanned out according to `exec`.
    pub fn batch_search(
        &self,
        queries: &[Vec<f32>],
        k: usize,
        params: SearchParams,
        exec: Execution,
    ) -> Result<Vec<Vec<SearchHit>>, IndexError> {
        exec.try_map(queries, |q| self.search_with(q, k, params))
    }

    pub fn save(&self) -> Vec<u8> {
        persist::save(self)
    }

    pub fn load(bytes: &[u8]) -> Result<Self, PersistError> {
        persist::load(bytes)
    }

    pub(crate) fn from_parts(
        config: IndexConfig,
        ids: Vec<String>,
        vectors: Vec<f32>,
        structure: Structure,
    ) -> Result<Self, String> {
        if vectors.len() != ids.len() * config.dimension {
            return Err("vector block length does not match id table".into());
        }
        let mut slots = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if slots.insert(id.clone(), i as u32).is_some() {
                return Err(format!("duplicate id {id}"));
            }
        }
        let ranks = compute_ranks(&ids);
        Ok(VectorIndex { config, ids, vectors, ranks, slots, structure })
    }

    pub(crate) fn structure(&self) -> &Structure {
        &self.structure
    }

    pub(crate) fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }
}
