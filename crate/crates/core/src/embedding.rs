//! Dense text embeddings.
//!
//! Two providers sit behind the [`Embedder`] trait: a remote HTTP service
//! (any sentence encoder exposed through the JSON contract below) and a
//! deterministic signed feature-hashing embedder used offline and in tests.
//!
//! Remote contract: `POST endpoint` with `{"texts": [...], "model": "<version>"}`,
//! answered by `{"vectors": [[...], ...], "model": "..."}`. Any non-200 reply
//! or transport failure is retried with exponential backoff.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{ArtifactChunk, Partition};
use crate::exec::Execution;
use crate::transport::{post_with_retry, RetriesExhausted, RetryPolicy, Transport};

pub const DEFAULT_DIMENSION: usize = 384;
pub const DEFAULT_MAX_BATCH: usize = 64;
pub const MIN_DIMENSION: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("no features: text has no word tokens")]
    NoFeatures,
    #[error("invalid embedder spec: {0}")]
    InvalidSpec(String),
    #[error("batch of {size} exceeds the maximum of {max}")]
    BatchTooLarge { size: usize, max: usize },
    #[error("remote embedder unavailable: {0}")]
    Transport(#[from] RetriesExhausted),
    #[error("provider returned {actual} vectors for {expected} inputs")]
    Arity { expected: usize, actual: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("provider returned an all-zero vector")]
    ZeroVector,
    #[error("embedding chunk {chunk_id}: {source}")]
    Chunk {
        chunk_id: String,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("duplicate chunk id {0}")]
    DuplicateChunk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Remote,
    Hashing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub model_version: String,
    pub endpoint: Option<String>,
    pub seed: Option<u64>,
}

impl EmbedderSpec {
    pub fn hashing(dimension: usize, seed: u64) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Hashing,
            dimension,
            model_version: format!("hashing-{dimension}-s{seed}"),
            endpoint: None,
            seed: Some(seed),
        }
    }

    pub fn remote(endpoint: impl Into<String>, model_version: impl Into<String>, dimension: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Remote,
            dimension,
            model_version: model_version.into(),
            endpoint: Some(endpoint.into()),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dimension < MIN_DIMENSION {
            return Err(EmbedError::InvalidSpec(format!(
                "dimension {} is below the minimum of {MIN_DIMENSION}",
                self.dimension
            )));
        }
        match self.kind {
            EmbedderKind::Remote if self.endpoint.as_deref().is_none_or(str::is_empty) => {
                Err(EmbedError::InvalidSpec("remote embedder requires an endpoint".into()))
            }
            EmbedderKind::Hashing if self.seed.is_none() => {
                Err(EmbedError::InvalidSpec("hashing embedder requires a seed".into()))
            }
            _ => Ok(()),
        }
    }
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::hashing(DEFAULT_DIMENSION, 0)
    }
}

/// A failure inside a batch; `index` is the first offending input (0 when the
/// whole batch failed at once).
#[derive(Debug)]
pub struct BatchError {
    pub index: usize,
    pub error: EmbedError,
}

pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbedderSpec;

    fn max_batch(&self) -> usize {
        DEFAULT_MAX_BATCH
    }

    /// One unit-norm vector per input, in order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BatchError>;

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        self.embed_batch(&[text]).map(|mut v| v.remove(0)).map_err(|e| e.error)
    }
}

/// Scales `v` to unit L2 norm in place.
pub fn l2_normalize(v: &mut [f32]) -> Result<(), EmbedError> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::ZeroVector);
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(())
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit feature hash: FNV-1a over the UTF-8 bytes, starting from an
/// offset basis perturbed by the seed, finished with the splitmix64 mixer.
pub fn feature_hash(seed: u64, feature: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ mix64(seed);
    for &b in feature.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// Lowercase alphanumeric word tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature-hashing embedding over word unigrams and bigrams.
///
/// Each feature lands in bucket `h % dimension` with sign `-1` when the top bit
/// of `h` is set; bucket counts are then L2-normalized.
pub fn hashing_embed(text: &str, dimension: usize, seed: u64) -> Result<Vec<f32>, EmbedError> {
    let tokens = word_tokens(text);
    if tokens.is_empty() {
        return Err(EmbedError::NoFeatures);
    }
    let mut acc = vec![0f64; dimension];
    let mut add = |feature: &str| {
        let h = feature_hash(seed, feature);
        let bucket = (h % dimension as u64) as usize;
        acc[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    };
    for t in &tokens {
        add(t);
    }
    for w in tokens.windows(2) {
        add(&format!("{} {}", w[0], w[1]));
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    // n tokens give 2n - 1 features, an odd number of +-1 terms, so at least
    // one bucket is nonzero.
    if norm == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(acc.into_iter().map(|x| (x / norm) as f32).collect())
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    spec: EmbedderSpec,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self, EmbedError> {
        spec.validate()?;
        if spec.kind != EmbedderKind::Hashing {
            return Err(EmbedError::InvalidSpec("expected a hashing spec".into()));
        }
        let seed = spec.seed.expect("validated");
        Ok(HashingEmbedder { spec, seed })
    }
}

impl Embedder for HashingEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BatchError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                hashing_embed(t, self.spec.dimension, self.seed).map_err(|error| BatchError { index, error })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    spec: EmbedderSpec,
    transport: Transport,
    retry: RetryPolicy,
    max_batch: usize,
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f32>>,
}

impl RemoteEmbedder {
    pub fn new(spec: EmbedderSpec, transport: Transport, retry: RetryPolicy) -> Result<Self, EmbedError> {
        spec.validate()?;
        if spec.kind != EmbedderKind::Remote {
            return Err(EmbedError::InvalidSpec("expected a remote spec".into()));
        }
        Ok(RemoteEmbedder { spec, transport, retry, max_batch: DEFAULT_MAX_BATCH })
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    fn call(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.len() > self.max_batch {
            return Err(EmbedError::BatchTooLarge { size: texts.len(), max: self.max_batch });
        }
        let endpoint = self.spec.endpoint.as_deref().expect("validated");
        let body = json!({ "texts": texts, "model": self.spec.model_version });
        let value = post_with_retry(self.transport.0.as_ref(), &self.retry, endpoint, &body)?;
        let resp: RemoteResponse =
            serde_json::from_value(value).map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::Arity { expected: texts.len(), actual: resp.vectors.len() });
        }
        resp.vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.spec.dimension {
                    return Err(EmbedError::DimensionMismatch { expected: self.spec.dimension, actual: v.len() });
                }
                l2_normalize(&mut v)?;
                Ok(v)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BatchError> {
        self.call(texts).map_err(|error| BatchError { index: 0, error })
    }
}

/// Builds the embedder described by `spec`. Remote specs need a transport.
pub fn embedder_from_spec(
    spec: &EmbedderSpec,
    transport: Option<Transport>,
    retry: RetryPolicy,
) -> Result<Box<dyn Embedder>, EmbedError> {
    match spec.kind {
        EmbedderKind::Hashing => Ok(Box::new(HashingEmbedder::new(spec.clone())?)),
        EmbedderKind::Remote => {
            let transport = transport
                .ok_or_else(|| EmbedError::InvalidSpec("no transport available for remote embedder".into()))?;
            Ok(Box::new(RemoteEmbedder::new(spec.clone(), transport, retry)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub chunk_id: String,
    pub partition: Partition,
    pub vector: Vec<f32>,
    pub model_version: String,
    pub embedded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub ticket: usize,
    pub comment: usize,
    pub pr: usize,
}

impl PartitionCounts {
    pub fn get(&self, p: Partition) -> usize {
        match p {
            Partition::Ticket => self.ticket,
            Partition::Comment => self.comment,
            Partition::Pr => self.pr,
        }
    }
}

/// All embeddings of one model version; at most one record per chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    model_version: String,
    dimension: usize,
    records: BTreeMap<String, EmbeddingRecord>,
}

impl EmbeddingStore {
    pub fn new(spec: &EmbedderSpec) -> Self {
        EmbeddingStore { model_version: spec.model_version.clone(), dimension: spec.dimension, records: BTreeMap::new() }
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&EmbeddingRecord> {
        self.records.get(chunk_id)
    }

    /// Records in chunk-id order.
    pub fn records(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.values()
    }

    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.values().filter(move |r| r.partition == p)
    }

    pub fn counts(&self) -> PartitionCounts {
        let mut c = PartitionCounts::default();
        for r in self.records.values() {
            match r.partition {
                Partition::Ticket => c.ticket += 1,
                Partition::Comment => c.comment += 1,
                Partition::Pr => c.pr += 1,
            }
        }
        c
    }

    /// Inserts a record, enforcing the store's dimension and model version.
    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), EmbedError> {
        if record.vector.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch { expected: self.dimension, actual: record.vector.len() });
        }
        if record.model_version != self.model_version {
            return Err(EmbedError::InvalidSpec(format!(
                "record model {} does not match store model {}",
                record.model_version, self.model_version
            )));
        }
        if self.records.contains_key(&record.chunk_id) {
            return Err(EmbedError::DuplicateChunk(record.chunk_id));
        }
        self.records.insert(record.chunk_id.clone(), record);
        Ok(())
    }
}

/// Embeds every chunk with `embedder`, batching up to its maximum batch size.
pub fn embed_corpus(
    chunks: &[ArtifactChunk],
    embedder: &dyn Embedder,
    embedded_at: DateTime<Utc>,
    exec: Execution,
) -> Result<EmbeddingStore, EmbedError> {
    let spec = embedder.spec();
    spec.validate()?;
    let batches: Vec<&[ArtifactChunk]> = chunks.chunks(embedder.max_batch().max(1)).collect();
    let vectors = exec.try_map(&batches, |batch| {
        let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
        embedder.embed_batch(&texts).map_err(|e| EmbedError::Chunk {
            chunk_id: batch[e.index.min(batch.len() - 1)].chunk_id.clone(),
            source: Box::new(e.error),
        })
    })?;
    let mut store = EmbeddingStore::new(spec);
    for (chunk, vector) in chunks.iter().zip(vectors.into_iter().flatten()) {
        store.insert(EmbeddingRecord {
            chunk_id: chunk.chunk_id.clone(),
            partition: chunk.partition,
            vector,
            model_version: spec.model_version.clone(),
            embedded_at,
        })?;
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshReport {
    pub re_embedded: usize,
    pub model_version: String,
}

/// Re-embeds every chunk under a new embedder and swaps the store contents.
/// On failure `store` is left untouched.
pub fn refresh_embeddings(
    store: &mut EmbeddingStore,
    chunks: &[ArtifactChunk],
    embedder: &dyn Embedder,
    embedded_at: DateTime<Utc>,
    exec: Execution,
) -> Result<RefreshReport, EmbedError> {
    let fresh = embed_corpus(chunks, embedder, embedded_at, exec)?;
    let report = RefreshReport { re_embedded: fresh.len(), model_version: fresh.model_version.clone() };
    *store = fresh;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::TransportError;
    use chrono::TimeZone;
    use serde_json::Value;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn at() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()
    }

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
    }

    fn chunk(id: &str, p: Partition, text: &str) -> ArtifactChunk {
        ArtifactChunk { chunk_id: id.into(), partition: p, text: text.into(), timestamp: at(), source_key: "AB-1".into() }
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let a = hashing_embed("UI crash on toggle", 384, 7).unwrap();
        let b = hashing_embed("UI crash on toggle", 384, 7).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!((norm(&a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn no_features() {
        assert!(matches!(hashing_embed("  -- ", 64, 1), Err(EmbedError::NoFeatures)));
        assert!(matches!(hashing_embed("", 64, 1), Err(EmbedError::NoFeatures)));
    }

    /// Independent re-statement of the hash spec, byte by byte.
    fn reference_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
        fn splitmix(mut z: u64) -> u64 {
            z ^= z >> 30;
            z = z.wrapping_mul(0xbf58476d1ce4e5b9);
            z ^= z >> 27;
            z = z.wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        }
        let words: Vec<String> = text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(String::from)
            .collect();
        let mut feats = words.clone();
        for i in 1..words.len() {
            feats.push(words[i - 1].clone() + " " + &words[i]);
        }
        let mut v = vec![0.0; dim];
        for f in feats {
            let mut h = 14695981039346656037u64 ^ splitmix(seed);
            for b in f.bytes() {
                h = (h ^ b as u64).wrapping_mul(1099511628211);
            }
            let h = splitmix(h);
            v[(h % dim as u64) as usize] += if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn seeds_decorrelate() {
        let a = hashing_embed("ui crash", 384, 1).unwrap();
        let b = hashing_embed("ui crash", 384, 2).unwrap();
        let ra = reference_embed("ui crash", 384, 1);
        let rb = reference_embed("ui crash", 384, 2);
        for (x, y) in a.iter().zip(&ra) {
            assert!((f64::from(*x) - y).abs() < 1e-6);
        }
        let ref_cos: f64 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
        assert!(ref_cos < 0.99, "reference cosine {ref_cos}");
        assert!((cos(&a, &b) - ref_cos).abs() < 1e-6);
    }

    #[test]
    fn spec_validation() {
        assert!(EmbedderSpec::hashing(4, 1).validate().is_err());
        let mut s = EmbedderSpec::hashing(16, 1);
        s.seed = None;
        assert!(s.validate().is_err());
        let mut r = EmbedderSpec::remote("http://e", "m", 16);
        r.endpoint = None;
        assert!(r.validate().is_err());
    }

    fn stub(dim: usize, drop_one: bool) -> Transport {
        Transport::new(move |_: &str, body: &Value| {
            let n = body["texts"].as_array().unwrap().len() - usize::from(drop_one);
            let vectors: Vec<Vec<f32>> = (0..n).map(|i| (0..dim).map(|j| (i + j + 1) as f32).collect()).collect();
            Ok(json!({ "vectors": vectors, "model": body["model"] }))
        })
    }

    #[test]
    fn remote_contract() {
        let e = RemoteEmbedder::new(EmbedderSpec::remote("http://e", "m1", 8), stub(8, false), RetryPolicy::immediate(1)).unwrap();
        let v = e.embed_batch(&["a", "b", "c"]).unwrap();
        assert_eq!(v.len(), 3);
        for x in &v {
            assert!((norm(x) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn remote_arity_and_dimension() {
        let e = RemoteEmbedder::new(EmbedderSpec::remote("http://e", "m1", 8), stub(8, true), RetryPolicy::immediate(1)).unwrap();
        assert!(matches!(e.embed_batch(&["a", "b", "c"]).unwrap_err().error, EmbedError::Arity { expected: 3, actual: 2 }));
        let e = RemoteEmbedder::new(EmbedderSpec::remote("http://e", "m1", 384), stub(768, false), RetryPolicy::immediate(1)).unwrap();
        let err = e.embed_batch(&["a"]).unwrap_err().error;
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn remote_retries_then_hard_error() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let t = Transport::new(move |_: &str, _: &Value| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(TransportError::Status { status: 502 })
        });
        let e = RemoteEmbedder::new(EmbedderSpec::remote("http://e", "m1", 8), t, RetryPolicy::immediate(4)).unwrap();
        assert!(matches!(e.embed("x"), Err(EmbedError::Transport(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn remote_batch_limit() {
        let e = RemoteEmbedder::new(EmbedderSpec::remote("http://e", "m1", 8), stub(8, false), RetryPolicy::immediate(1))
            .unwrap()
            .with_max_batch(2);
        assert!(matches!(e.embed_batch(&["a", "b", "c"]).unwrap_err().error, EmbedError::BatchTooLarge { .. }));
        // embed_corpus splits into batches of the provider's maximum
        let chunks: Vec<_> = (0..5).map(|i| chunk(&format!("ticket:AB-{i}"), Partition::Ticket, "x")).collect();
        let store = embed_corpus(&chunks, &e, at(), Execution::Sequential).unwrap();
        assert_eq!(store.len(), 5);
    }

    #[test]
    fn corpus_counts() {
        let emb = HashingEmbedder::new(EmbedderSpec::hashing(64, 3)).unwrap();
        let mut chunks: Vec<_> = (0..3).map(|i| chunk(&format!("ticket:AB-{i}"), Partition::Ticket, "crash on save")).collect();
        chunks.push(chunk("pr:a/b#1", Partition::Pr, "fix save"));
        chunks.push(chunk("pr:a/b#2", Partition::Pr, "guard save"));
        let store = embed_corpus(&chunks, &emb, at(), Execution::Parallel).unwrap();
        assert_eq!(store.counts(), PartitionCounts { ticket: 3, comment: 0, pr: 2 });
        let again = embed_corpus(&chunks, &emb, at(), Execution::Sequential).unwrap();
        assert_eq!(store, again);
        let empty = embed_corpus(&[], &emb, at(), Execution::Parallel).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn offending_chunk_named() {
        let emb = HashingEmbedder::new(EmbedderSpec::hashing(64, 3)).unwrap();
        let chunks = vec![chunk("ticket:AB-1", Partition::Ticket, "ok"), chunk("ticket:AB-2", Partition::Ticket, "--")];
        let err = embed_corpus(&chunks, &emb, at(), Execution::Sequential).unwrap_err();
        assert!(matches!(err, EmbedError::Chunk { ref chunk_id, .. } if chunk_id == "ticket:AB-2"), "{err}");
    }

    #[test]
    fn refresh_swaps_atomically() {
        let chunks: Vec<_> = (0..5).map(|i| chunk(&format!("ticket:AB-{i}"), Partition::Ticket, &format!("crash {i}"))).collect();
        let e1 = HashingEmbedder::new(EmbedderSpec::hashing(64, 1)).unwrap();
        let e2 = HashingEmbedder::new(EmbedderSpec::hashing(64, 2)).unwrap();
        let mut store = embed_corpus(&chunks, &e1, at(), Execution::Sequential).unwrap();
        let before = store.clone();
        let report = refresh_embeddings(&mut store, &chunks, &e2, at(), Execution::Sequential).unwrap();
        assert_eq!(report.re_embedded, 5);
        assert_eq!(report.model_version, "hashing-64-s2");
        assert_eq!(store.model_version(), "hashing-64-s2");
        for r in store.records() {
            assert_ne!(r.vector, before.get(&r.chunk_id).unwrap().vector);
        }

        // a remote provider failing on the batch holding chunk 3 leaves the store untouched
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let flaky = Transport::new(move |_: &str, body: &Value| {
            if c.fetch_add(1, Ordering::SeqCst) >= 2 {
                return Err(TransportError::Status { status: 500 });
            }
            let n = body["texts"].as_array().unwrap().len();
            Ok(json!({ "vectors": vec![vec![1.0f32; 8]; n] }))
        });
        let remote = RemoteEmbedder::new(EmbedderSpec::remote("http://e", "m2", 8), flaky, RetryPolicy::immediate(1))
            .unwrap()
            .with_max_batch(1);
        let snapshot = store.clone();
        let err = refresh_embeddings(&mut store, &chunks, &remote, at(), Execution::Sequential).unwrap_err();
        assert!(matches!(err, EmbedError::Chunk { ref chunk_id, .. } if chunk_id == "ticket:AB-2"), "{err}");
        assert_eq!(store, snapshot);
    }

    #[test]
    fn store_rejects_mixed_dimension() {
        let mut store = EmbeddingStore::new(&EmbedderSpec::hashing(8, 0));
        let rec = EmbeddingRecord {
            chunk_id: "x".into(),
            partition: Partition::Pr,
            vector: vec![1.0; 9],
            model_version: "hashing-8-s0".into(),
            embedded_at: at(),
        };
        assert!(matches!(store.insert(rec), Err(EmbedError::DimensionMismatch { .. })));
    }
}
