use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use ticketrag::lexical::{idf, tf_weight, tokenize, Bm25Params, LexicalIndex};

const VOCAB: &[&str] = &["crash", "cache", "login", "token", "timeout", "theme", "render", "queue", "the", "a", "on"];

fn doc() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB.to_vec()), 0..12).prop_map(|w| w.join(" "))
}

/// Straight-line BM25: k1 = 1.2, b = 0.75, distinct query terms.
fn naive_scores(docs: &[(String, String)], query: &str) -> Vec<(String, f64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokenize(t)).collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let terms: HashSet<String> = tokenize(query).into_iter().collect();
    let mut out = Vec::new();
    for ((id, _), t) in docs.iter().zip(&toks) {
        let mut s = 0.0;
        for term in &terms {
            let df = toks.iter().filter(|d| d.contains(term)).count() as f64;
            let tf = t.iter().filter(|w| *w == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = if avg > 0.0 { t.len() as f64 / avg } else { 0.0 };
            s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * norm));
        }
        if s > 0.0 {
            out.push((id.clone(), s));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

proptest! {
    #[test]
    fn idf_falls_as_df_grows(n in 1usize..10_000, a in 0usize..10_000, b in 0usize..10_000) {
        let (lo, hi) = (a.min(b).min(n), a.max(b).min(n));
        prop_assert!(idf(n, lo) >= idf(n, hi));
        prop_assert!(idf(n, hi) > 0.0);
    }

    #[test]
    fn tf_weight_grows_with_tf(tf in 0.0f64..50.0, extra in 0.0f64..50.0, len in 1.0f64..200.0, avg in 1.0f64..200.0) {
        let p = Bm25Params::default();
        prop_assert!(tf_weight(tf + extra, len, avg, p) >= tf_weight(tf, len, avg, p));
    }

    #[test]
    fn full_depth_search_returns_exactly_the_positive_docs(docs in prop::collection::vec(doc(), 1..15), query in doc()) {
        let docs: Vec<(String, String)> = docs.into_iter().enumerate().map(|(i, t)| (format!("d{i:02}"), t)).collect();
        let index = LexicalIndex::build_texts(docs.iter().map(|(i, t)| (i.as_str(), t.as_str())), Bm25Params::default());
        let want = naive_scores(&docs, &query);
        let got = index.search(&query, docs.len() + 3);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.score - w.1).abs() < 1e-9, "{} {} vs {} {}", g.chunk_id, g.score, w.0, w.1);
        }
        let by_id: HashMap<&str, f64> = got.iter().map(|h| (h.chunk_id.as_str(), h.score)).collect();
        for (id, _) in &want {
            prop_assert!(by_id.contains_key(id.as_str()));
        }
        for pair in got.windows(2) {
            prop_assert!(pair[0].score > pair[1].score || (pair[0].score == pair[1].score && pair[0].chunk_id < pair[1].chunk_id));
        }
    }

    #[test]
    fn tokenize_is_idempotent(text in "[a-zA-Z0-9 ,.!?_-]{0,80}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }
}

#[test]
fn identical_docs_tie_by_id() {
    let index = LexicalIndex::build_texts([("b", "cache crash"), ("a", "cache crash"), ("c", "render")], Bm25Params::default());
    let hits = index.search("crash", 10);
    let ids: Vec<&str> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);
}
