use std::collections::HashSet;

use proptest::prelude::*;
use ticketrag::evaluation::{bleu, first_relevant_rank, mrr, recall_at_k, rouge_l};

fn ids() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0u8..30).prop_map(|i| format!("d{i}")), 0..25)
}

fn naive_recall(ranked: &[String], relevant: &[String], k: usize) -> f64 {
    let mut found = 0;
    for r in relevant {
        let mut hit = false;
        for (i, d) in ranked.iter().enumerate() {
            if i < k && d == r {
                hit = true;
            }
        }
        if hit {
            found += 1;
        }
    }
    found as f64 / relevant.len() as f64
}

fn naive_reciprocal(ranked: &[String], relevant: &[String]) -> f64 {
    for (i, d) in ranked.iter().enumerate() {
        if relevant.contains(d) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn tokens(min: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, min..14)
}

proptest! {
    #[test]
    fn recall_matches_loop_oracle(ranked in ids(), first in 0u8..30, relevant in ids(), k in 1usize..30) {
        let mut rel: Vec<String> = relevant;
        rel.push(format!("d{first}"));
        rel.sort();
        rel.dedup();
        let set: HashSet<String> = rel.iter().cloned().collect();
        prop_assert_eq!(recall_at_k(&ranked, &set, k).unwrap(), naive_recall(&ranked, &rel, k));
    }

    #[test]
    fn mrr_matches_loop_oracle(cases in prop::collection::vec((ids(), ids()), 1..20)) {
        let ranks: Vec<Option<usize>> = cases
            .iter()
            .map(|(r, rel)| first_relevant_rank(r, &rel.iter().cloned().collect()))
            .collect();
        let want = cases.iter().map(|(r, rel)| naive_reciprocal(r, rel)).sum::<f64>() / cases.len() as f64;
        prop_assert!((mrr(&ranks) - want).abs() < 1e-12);
    }

    #[test]
    fn identical_sequences_score_one(x in tokens(4)) {
        prop_assert!((bleu(&x, std::slice::from_ref(&x), 4) - 1.0).abs() < 1e-12);
        prop_assert!((rouge_l(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjacent_swap_lowers_rouge(x in tokens(4), at in 0usize..13) {
        let n = x.len() - 1;
        let Some(i) = (0..n).map(|d| (at + d) % n).find(|&i| x[i] != x[i + 1]) else {
            return Ok(());
        };
        let mut y = x.clone();
        y.swap(i, i + 1);
        prop_assert!(rouge_l(&y, &x) < 1.0);
    }

    #[test]
    fn adjacent_swap_lowers_bleu_for_distinct_tokens(x in Just((0u8..12).collect::<Vec<_>>()).prop_shuffle(), len in 4usize..12, i in 0usize..11) {
        let x = &x[..len];
        let i = i % (len - 1);
        let mut y = x.to_vec();
        y.swap(i, i + 1);
        prop_assert!(bleu(&y, &[x.to_vec()], 4) < 1.0);
    }
}

#[test]
fn shifting_a_lone_token_inside_a_run_keeps_bleu_at_one() {
    let x = [1, 1, 1, 1, 2, 1, 1, 1];
    let mut y = x;
    y.swap(3, 4);
    assert_eq!(bleu(&y, &[x.to_vec()], 4), 1.0);
    assert!(rouge_l(&y, &x) < 1.0);
}
