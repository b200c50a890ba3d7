//! Sequential vs. parallel execution of the batch paths.
//!
//! `cargo bench -p ticketrag-core --bench parallel`

use std::hint::black_box;
use std::time::Duration;

use chrono::{DateTime, Utc};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ticketrag::corpus::{ArtifactChunk, CleaningConfig, Corpus};
use ticketrag::embedding::{embed_corpus, EmbedderSpec, HashingEmbedder};
use ticketrag::evaluation::{mixture_points, MixtureSpec};
use ticketrag::exec::Execution;
use ticketrag::index::{IndexConfig, IvfParams, SearchParams, VectorIndex};
use ticketrag::synthetic::planted_duplicate_corpus;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];
const DIM: usize = 64;

fn vectors(n: usize, stream: u64) -> Vec<Vec<f32>> {
    let spec = MixtureSpec::new(n, DIM, 11);
    mixture_points(&spec, n, stream).chunks(DIM).map(<[f32]>::to_vec).collect()
}

fn build(points: &[Vec<f32>], config: IndexConfig, exec: Execution) -> VectorIndex {
    let ids: Vec<String> = (0..points.len()).map(|i| format!("v{i}")).collect();
    VectorIndex::build(ids.iter().map(String::as_str).zip(points.iter().map(Vec::as_slice)), config, exec).unwrap()
}

fn batch_search(c: &mut Criterion) {
    let points = vectors(20_000, 0);
    let queries = vectors(256, 1);
    let index = build(&points, IndexConfig::flat(DIM), Execution::Parallel);
    let mut g = c.benchmark_group("flat_batch_search_20k");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(index.batch_search(&queries, 10, SearchParams::default(), exec).unwrap()))
        });
    }
    g.finish();
}

fn ivf_build(c: &mut Criterion) {
    let points = vectors(10_000, 2);
    let config = IndexConfig::ivf(DIM, IvfParams { nlist: 64, ..IvfParams::default() });
    let mut g = c.benchmark_group("ivf_build_10k");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| black_box(build(&points, config, exec))));
    }
    g.finish();
}

fn embedding(c: &mut Criterion) {
    let now: DateTime<Utc> = "2025-01-01T00:00:00Z".parse().unwrap();
    let p = planted_duplicate_corpus(1500, 3, now);
    let chunks: Vec<ArtifactChunk> = Corpus::from_parts(p.tickets, p.prs, &CleaningConfig::default()).chunks;
    let embedder = HashingEmbedder::new(EmbedderSpec::default()).unwrap();
    let mut g = c.benchmark_group("embed_corpus");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, chunks.len()), |b| {
            b.iter(|| black_box(embed_corpus(&chunks, &embedder, now, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3));
    targets = batch_search, ivf_build, embedding
}
criterion_main!(benches);
