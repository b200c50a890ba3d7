use std::collections::HashSet;

use chrono::{DateTime, Duration, Utc};
use proptest::prelude::*;
use ticketrag::corpus::{ArtifactChunk, CleaningConfig, Corpus, Partition};
use ticketrag::embedding::{embed_corpus, EmbedderSpec, HashingEmbedder};
use ticketrag::exec::Execution;
use ticketrag::index::IndexConfig;
use ticketrag::lexical::Bm25Params;
use ticketrag::retrieval::{combine_score, retrieve, FeedbackStats, KnowledgeBase, QuerySpec, TemporalConfig};
use ticketrag::synthetic::planted_duplicate_corpus;

fn now() -> DateTime<Utc> {
    "2025-02-01T00:00:00Z".parse().unwrap()
}

fn embedder() -> HashingEmbedder {
    HashingEmbedder::new(EmbedderSpec::hashing(384, 0)).unwrap()
}

fn kb_for(chunks: &[ArtifactChunk], links: &[ticketrag::corpus::LinkEdge], index: IndexConfig) -> KnowledgeBase {
    let store = embed_corpus(chunks, &embedder(), now(), Execution::default()).unwrap();
    KnowledgeBase::build(chunks, links, &store, index, Bm25Params::default(), Execution::default()).unwrap()
}

fn synthetic(n: usize, seed: u64) -> Corpus {
    let p = planted_duplicate_corpus(n, seed, now());
    Corpus::from_parts(p.tickets, p.prs, &CleaningConfig::default())
}

const WORDS: &[&str] = &["cache", "crash", "login", "token", "timeout", "theme", "render", "queue", "export", "sync", "panel", "worker"];

fn ticket_chunks() -> impl Strategy<Value = Vec<ArtifactChunk>> {
    prop::collection::vec((prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..8), 0i64..900), 2..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (words, age))| ArtifactChunk {
                chunk_id: format!("ticket:T-{i}"),
                partition: Partition::Ticket,
                text: words.join(" "),
                timestamp: now() - Duration::days(age),
                source_key: format!("T-{i}"),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reduced_pipeline_keeps_dense_order(chunks in ticket_chunks(), q in prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..5), k in 1usize..10) {
        let kb = kb_for(&chunks, &[], IndexConfig::flat(384));
        let mut spec = QuerySpec::new(&q.join(" "), now());
        spec.hybrid = false;
        spec.temporal = TemporalConfig::disabled();
        spec.weights.overlap = 0.0;
        spec.k_per_partition = k;
        spec.k_final = k;
        let bundle = retrieve(&spec, &kb, &embedder(), &FeedbackStats::new()).unwrap();
        let qv = ticketrag::embedding::hashing_embed(&spec.text, 384, 0).unwrap();
        let raw = kb.dense().get(Partition::Ticket).unwrap().search(&qv, k).unwrap();
        let got: Vec<&str> = bundle.hits.iter().map(|h| h.chunk_id.as_str()).collect();
        let want: Vec<&str> = raw.iter().map(|h| h.chunk_id.as_str()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn score_rises_with_each_component(
        base in 0.0f64..1.0, t in 0.0f64..1.0, boost in -0.2f64..0.2, overlap in 0.0f64..1.0, w in 0.0f64..1.0, d in 0.0f64..0.5,
    ) {
        let s = combine_score(base, t, boost, overlap, w);
        prop_assert!(combine_score(base + d, t, boost, overlap, w) >= s);
        prop_assert!(combine_score(base, (t + d).min(1.0), boost, overlap, w) >= s);
        prop_assert!(combine_score(base, t, boost + d, overlap, w) >= s);
        prop_assert!(combine_score(base, t, boost, overlap + d, w) >= s);
    }

    #[test]
    fn equal_timestamps_keep_order_without_overlap_term(chunks in ticket_chunks(), q in prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..5)) {
        let chunks: Vec<ArtifactChunk> = chunks.into_iter().map(|c| ArtifactChunk { timestamp: now() - Duration::days(200), ..c }).collect();
        let kb = kb_for(&chunks, &[], IndexConfig::flat(384));
        let mut spec = QuerySpec::new(&q.join(" "), now());
        spec.weights.overlap = 0.0;
        spec.k_final = 5;
        let with = retrieve(&spec, &kb, &embedder(), &FeedbackStats::new()).unwrap();
        spec.temporal = TemporalConfig::disabled();
        let without = retrieve(&spec, &kb, &embedder(), &FeedbackStats::new()).unwrap();
        let a: Vec<&str> = with.hits.iter().map(|h| h.chunk_id.as_str()).collect();
        let b: Vec<&str> = without.hits.iter().map(|h| h.chunk_id.as_str()).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn linked_prs_come_from_ticket_hits_and_real_edges() {
    let corpus = synthetic(150, 21);
    let kb = kb_for(&corpus.chunks, &corpus.links, IndexConfig::flat(384));
    let edges: HashSet<(String, String)> = corpus.links.iter().map(|e| (e.ticket_key.clone(), e.pr_id().to_string())).collect();
    let mut seen = 0;
    for t in &corpus.tickets {
        let bundle = retrieve(&QuerySpec::for_ticket(&t.title, &t.description, now()), &kb, &embedder(), &FeedbackStats::new()).unwrap();
        for l in &bundle.linked_prs {
            assert!(edges.contains(&(l.ticket_key.clone(), l.pr.clone())), "{l:?} has no edge");
            assert!(bundle.hits.iter().any(|h| h.partition == Partition::Ticket && h.source_key == l.ticket_key));
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn every_chunk_retrieves_itself_first_without_decay() {
    let corpus = synthetic(200, 8);
    assert!(corpus.chunks.len() <= 1000);
    let kb = kb_for(&corpus.chunks, &corpus.links, IndexConfig::flat(384));
    let e = embedder();
    let text_of: std::collections::HashMap<&str, &str> = corpus.chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())).collect();
    let mut unique = 0;
    for c in &corpus.chunks {
        let mut spec = QuerySpec::new(&c.text, now());
        spec.temporal = TemporalConfig::disabled();
        let bundle = retrieve(&spec, &kb, &e, &FeedbackStats::new()).unwrap();
        let top = &bundle.hits[0].chunk_id;
        if corpus.chunks.iter().filter(|o| o.text == c.text).count() == 1 {
            assert_eq!(top, &c.chunk_id, "query {:?}", c.text);
            unique += 1;
        } else {
            assert_eq!(text_of[top.as_str()], c.text, "query {:?}", c.text);
        }
    }
    assert!(unique * 2 > corpus.chunks.len());
}

#[test]
fn newer_near_duplicate_can_outrank_exact_text_under_decay() {
    let corpus = synthetic(200, 8);
    let kb = kb_for(&corpus.chunks, &corpus.links, IndexConfig::flat(384));
    let beaten = corpus
        .chunks
        .iter()
        .filter(|c| corpus.chunks.iter().filter(|o| o.text == c.text).count() == 1)
        .find_map(|c| {
            let bundle = retrieve(&QuerySpec::new(&c.text, now()), &kb, &embedder(), &FeedbackStats::new()).unwrap();
            (bundle.hits[0].chunk_id != c.chunk_id).then(|| (c.clone(), bundle.hits[0].clone()))
        });
    let (chunk, winner) = beaten.expect("decay never displaced an exact match");
    assert!(winner.timestamp > chunk.timestamp);
    assert!(winner.overlap < 1.0);
}

#[test]
fn overlap_term_can_flip_equal_age_pairs() {
    let m = 0.7;
    let (a_base, a_overlap, b_base, b_overlap) = (1.0, 0.0, 0.7, 1.0);
    let decayed = combine_score(a_base, m, 0.0, a_overlap, 0.25) - combine_score(b_base, m, 0.0, b_overlap, 0.25);
    let flat = combine_score(a_base, 1.0, 0.0, a_overlap, 0.25) - combine_score(b_base, 1.0, 0.0, b_overlap, 0.25);
    assert!(decayed < 0.0 && flat > 0.0, "{decayed} {flat}");
}
