//! Retrieval and generation metrics, plus the index benchmark harness.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{word_tokens, Embedder};
use crate::exec::Execution;
use crate::generation::{generate_extractive, grounding_score, ResolutionSuggestion};
use crate::index::{IndexConfig, IndexError, IndexKind, SearchParams, VectorIndex};
use crate::retrieval::{retrieve, EvidenceBundle, FeedbackStats, KnowledgeBase, QuerySpec, RetrievalError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("k must be positive")]
    ZeroK,
    #[error("query {0} has no relevant items")]
    NoRelevant(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if relevant.is_empty() {
        return Err(EvalError::NoRelevant(String::new()));
    }
    let mut seen = HashSet::new();
    let hits = ranked
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|id| relevant.contains(*id) && seen.insert(*id))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// 1-based rank of the first relevant item.
pub fn first_relevant_rank<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>) -> Option<usize> {
    ranked.iter().position(|id| relevant.contains(id.as_ref())).map(|i| i + 1)
}

/// Mean reciprocal rank; absent ranks count as 0. An empty input gives 0.
pub fn mrr(first_ranks: &[Option<usize>]) -> f64 {
    if first_ranks.is_empty() {
        return 0.0;
    }
    first_ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / first_ranks.len() as f64
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU without smoothing.
///
/// Modified n-gram precisions for `n = 1..=max_n` are combined by geometric
/// mean; orders for which the candidate has no n-grams are left out, and any
/// zero precision among the rest gives 0. The brevity penalty uses the
/// reference length closest to the candidate's (the shorter one on ties).
pub fn bleu<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut used = 0;
    for n in 1..=max_n {
        if candidate.len() < n {
            continue;
        }
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        if clipped == 0 {
            return 0.0;
        }
        let total = candidate.len() + 1 - n;
        log_sum += (clipped as f64 / total as f64).ln();
        used += 1;
    }
    if used == 0 {
        return 0.0;
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / used as f64).exp()
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean grounding over suggestion/bundle pairs; 0 for an empty set.
pub fn factual_consistency(pairs: &[(ResolutionSuggestion, EvidenceBundle)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(s, b)| grounding_score(&s.steps, b)).sum::<f64>() / pairs.len() as f64
}

/// One judged query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub query_id: String,
    pub text: String,
    pub relevant: BTreeSet<String>,
    /// Reference resolution text for BLEU and ROUGE-L.
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgments {
    pub queries: Vec<Judgment>,
}

impl RelevanceJudgments {
    pub fn validate(&self) -> Result<(), EvalError> {
        match self.queries.iter().find(|q| q.relevant.is_empty()) {
            Some(q) => Err(EvalError::NoRelevant(q.query_id.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDetail {
    pub query_id: String,
    pub ranked: Vec<String>,
    pub first_relevant_rank: Option<usize>,
    pub recall_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub bleu: f64,
    pub rouge_l: f64,
    pub factual_consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kind: IndexKind,
    pub label: String,
    pub build_ms: f64,
    pub mean_query_us: f64,
    pub p95_query_us: f64,
    pub recall_at_10_vs_flat: f64,
    pub memory_bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub per_query: Vec<QueryDetail>,
    pub generation: Option<GenerationMetrics>,
    pub bench: Vec<BenchRow>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Retrieval metrics over precomputed rankings, one per judged query.
pub fn score_rankings(judgments: &RelevanceJudgments, ranked: &[Vec<String>], ks: &[usize]) -> Result<EvalReport, EvalError> {
    judgments.validate()?;
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let mut report = EvalReport::default();
    let mut firsts = Vec::with_capacity(ranked.len());
    for (j, r) in judgments.queries.iter().zip(ranked) {
        let relevant: HashSet<String> = j.relevant.iter().cloned().collect();
        let mut recall_at = BTreeMap::new();
        for &k in ks {
            recall_at.insert(k, recall_at_k(r, &relevant, k)?);
        }
        let first = first_relevant_rank(r, &relevant);
        firsts.push(first);
        report.per_query.push(QueryDetail {
            query_id: j.query_id.clone(),
            ranked: r.clone(),
            first_relevant_rank: first,
            recall_at,
        });
    }
    let n = report.per_query.len().max(1) as f64;
    for &k in ks {
        let sum: f64 = report.per_query.iter().map(|q| q.recall_at[&k]).sum();
        report.recall_at.insert(k, sum / n);
    }
    report.mrr = mrr(&firsts);
    Ok(report)
}

/// Runs every judged query through retrieval and the extractive generator
/// and scores the results. Rankings are truncated at `k_final` of `template`.
pub fn evaluate(
    judgments: &RelevanceJudgments,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    template: &QuerySpec,
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    let mut rankings = Vec::new();
    let mut pairs = Vec::new();
    let (mut bleu_sum, mut rouge_sum, mut refs) = (0.0, 0.0, 0usize);
    for j in &judgments.queries {
        let mut q = QuerySpec::new(&j.text, template.now);
        q.k_per_partition = template.k_per_partition;
        q.k_final = template.k_final;
        q.hybrid = template.hybrid;
        q.temporal = template.temporal;
        q.weights = template.weights;
        let bundle = retrieve(&q, kb, embedder, &FeedbackStats::new())?;
        rankings.push(bundle.hits.iter().map(|h| h.chunk_id.clone()).collect());
        let suggestion = generate_extractive(&bundle);
        if let Some(reference) = &j.reference {
            let cand = word_tokens(&suggestion.steps.join(" "));
            let reference = word_tokens(reference);
            bleu_sum += bleu(&cand, std::slice::from_ref(&reference), 4);
            rouge_sum += rouge_l(&cand, &reference);
            refs += 1;
        }
        pairs.push((suggestion, bundle));
    }
    let mut report = score_rankings(judgments, &rankings, ks)?;
    let denom = refs.max(1) as f64;
    report.generation = Some(GenerationMetrics {
        bleu: bleu_sum / denom,
        rouge_l: rouge_sum / denom,
        factual_consistency: factual_consistency(&pairs),
    });
    Ok(report)
}

/// Seeded Gaussian mixture on the unit sphere. Each component has a random
/// mean and a random `latent_dim`-dimensional spread, plus isotropic noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub clusters: usize,
    pub latent_dim: usize,
    pub noise: f64,
}

impl MixtureSpec {
    pub fn new(n: usize, dim: usize, seed: u64) -> Self {
        MixtureSpec { n, dim, seed, clusters: 64, latent_dim: 16, noise: 1.0 }
    }
}

/// Row-major unit vectors from the mixture: `count` points drawn from the
/// stream selected by `stream` (corpus and queries use different streams of
/// the same components).
pub fn mixture_points(spec: &MixtureSpec, count: usize, stream: u64) -> Vec<f32> {
    let (dim, latent) = (spec.dim, spec.latent_dim.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let clusters = spec.clusters.max(1);
    let means: Vec<f64> = (0..clusters * dim).map(|_| normal(&mut rng)).collect();
    let scale = 1.0 / (latent as f64).sqrt();
    let bases: Vec<f64> = (0..clusters * dim * latent).map(|_| normal(&mut rng) * scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream + 1);
    let mut out = Vec::with_capacity(count * dim);
    let mut z = vec![0f64; latent];
    let mut v = vec![0f64; dim];
    for _ in 0..count {
        let c = (rand::Rng::random::<u64>(&mut rng) % clusters as u64) as usize;
        z.iter_mut().for_each(|x| *x = normal(&mut rng));
        let basis = &bases[c * dim * latent..(c + 1) * dim * latent];
        for (d, slot) in v.iter_mut().enumerate() {
            let row = &basis[d * latent..(d + 1) * latent];
            let spread: f64 = row.iter().zip(&z).map(|(b, z)| b * z).sum();
            *slot = means[c * dim + d] + spread + spec.noise * normal(&mut rng);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(v.iter().map(|x| (x / norm) as f32));
    }
    out
}

pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub warnings: Vec<String>,
}

fn label(cfg: &IndexConfig) -> String {
    match cfg.kind {
        IndexKind::Flat => "flat".to_owned(),
        IndexKind::Ivf => format!("ivf(nlist={},nprobe={})", cfg.ivf.nlist, cfg.ivf.nprobe),
        IndexKind::Hnsw => format!("hnsw(M={},ef_c={},ef_s={})", cfg.hnsw.m, cfg.hnsw.ef_construction, cfg.hnsw.ef_search),
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Mean fraction of each exact top-`k` list found by the approximate one.
pub fn recall_vs_exact(exact: &[Vec<String>], approx: &[Vec<String>]) -> f64 {
    if exact.is_empty() {
        return 0.0;
    }
    let total: f64 = exact
        .iter()
        .zip(approx)
        .map(|(e, a)| {
            if e.is_empty() {
                return 1.0;
            }
            let want: HashSet<&str> = e.iter().map(String::as_str).collect();
            a.iter().filter(|id| want.contains(id.as_str())).count() as f64 / e.len() as f64
        })
        .sum();
    total / exact.len() as f64
}

fn ids_of(hits: Vec<Vec<crate::index::SearchHit>>) -> Vec<Vec<String>> {
    hits.into_iter().map(|h| h.into_iter().map(|h| h.chunk_id).collect()).collect()
}

/// Builds a flat oracle plus every index in `configs` over a seeded mixture
/// corpus and measures build time, per-query latency, recall@10 against the
/// oracle, and memory. Queries are timed one at a time on the calling thread;
/// ground truth and recall use `exec`.
pub fn bench_indexes(spec: &MixtureSpec, configs: &[IndexConfig], queries: usize, exec: Execution) -> Result<BenchOutcome, EvalError> {
    const K: usize = 10;
    let mut warnings = Vec::new();
    if spec.n < 1000 {
        warnings.push(format!("n = {} is below 1000; timings are unstable", spec.n));
    }
    let data = mixture_points(spec, spec.n, 0);
    let qdata = mixture_points(spec, queries, 1);
    let qs: Vec<Vec<f32>> = qdata.chunks(spec.dim).map(<[f32]>::to_vec).collect();
    let ids: Vec<String> = (0..spec.n).map(|i| format!("v{i:07}")).collect();
    let entries = || ids.iter().map(String::as_str).zip(data.chunks(spec.dim));

    let mut all = vec![IndexConfig::flat(spec.dim)];
    all.extend(configs.iter().copied().filter(|c| c.kind != IndexKind::Flat).map(|mut c| {
        c.dimension = spec.dim;
        c
    }));

    let mut rows = Vec::new();
    let mut exact: Vec<Vec<String>> = Vec::new();
    for cfg in &all {
        let t = Instant::now();
        let index = VectorIndex::build(entries(), *cfg, exec)?;
        let build_ms = t.elapsed().as_secs_f64() * 1e3;
        let results = ids_of(index.batch_search(&qs, K, SearchParams::default(), exec)?);
        if cfg.kind == IndexKind::Flat {
            exact = results.clone();
        }
        let mut lat: Vec<f64> = Vec::with_capacity(qs.len());
        for q in &qs {
            let t = Instant::now();
            let hits = index.search(q, K)?;
            lat.push(t.elapsed().as_secs_f64() * 1e6);
            std::hint::black_box(hits);
        }
        let mean = lat.iter().sum::<f64>() / lat.len().max(1) as f64;
        lat.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            kind: cfg.kind,
            label: label(cfg),
            build_ms,
            mean_query_us: mean,
            p95_query_us: percentile(&lat, 95.0),
            recall_at_10_vs_flat: recall_vs_exact(&exact, &results),
            memory_bytes: index.memory_bytes(),
        });
    }
    Ok(BenchOutcome { rows, warnings })
}

/// Aligned plain-text table of bench rows.
pub fn render_bench_table(rows: &[BenchRow]) -> String {
    let header = ["index", "build ms", "mean us", "p95 us", "recall@10", "memory MiB", "latency vs flat"];
    let flat = rows.iter().find(|r| r.kind == IndexKind::Flat).map(|r| r.mean_query_us);
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                format!("{:.1}", r.build_ms),
                format!("{:.1}", r.mean_query_us),
                format!("{:.1}", r.p95_query_us),
                format!("{:.4}", r.recall_at_10_vs_flat),
                format!("{:.2}", r.memory_bytes as f64 / (1024.0 * 1024.0)),
                flat.filter(|f| *f > 0.0).map_or("-".into(), |f| format!("{:.1}%", 100.0 * r.mean_query_us / f)),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &body {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Report wrapper for a bench run.
pub fn bench_report(spec: &MixtureSpec, outcome: BenchOutcome) -> EvalReport {
    EvalReport { bench: outcome.rows, seed: Some(spec.seed), warnings: outcome.warnings, ..EvalReport::default() }
}
