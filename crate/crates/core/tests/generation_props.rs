use chrono::{DateTime, Utc};
use proptest::prelude::*;
use ticketrag::corpus::Partition;
use ticketrag::generation::{build_prompt, generate_extractive, grounding_score, word_count, ESCALATION_STEP};
use ticketrag::retrieval::{EvidenceBundle, LinkedPr, QuerySpec, RankedHit};

const WORDS: &[&str] = &[
    "restart", "the", "worker", "cache", "fixed", "token", "expired", "login", "page", "crash", "upgrade", "driver",
    "cleared", "queue", "export", "timeout", "patched", "null", "check", "render",
];

fn now() -> DateTime<Utc> {
    "2025-05-01T00:00:00Z".parse().unwrap()
}

fn sentence() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::sample::select(WORDS.to_vec()), 2..10), prop::sample::select(vec![".", "!", "?"]))
        .prop_map(|(w, end)| format!("{}{end}", w.join(" ")))
}

fn hit(i: usize, partition: Partition, text: String) -> RankedHit {
    let source_key = match partition {
        Partition::Pr => format!("acme/web#{}", 100 + i),
        _ => format!("SUP-{i}"),
    };
    let id_prefix = match partition {
        Partition::Ticket => "ticket",
        Partition::Comment => "comment",
        Partition::Pr => "pr",
    };
    RankedHit {
        chunk_id: format!("{id_prefix}:{source_key}:{i}"),
        partition,
        source_key,
        text,
        timestamp: now(),
        dense_score: 0.5,
        sparse_rank: None,
        overlap: 0.1,
        temporal_multiplier: 1.0,
        feedback_boost: 0.0,
        final_score: 1.0 - i as f64 / 20.0,
    }
}

fn bundle() -> impl Strategy<Value = EvidenceBundle> {
    let hit_spec = (prop::sample::select(Partition::ALL.to_vec()), prop::collection::vec(sentence(), 1..5));
    (prop::collection::vec(hit_spec, 1..8), prop::collection::vec(any::<bool>(), 8)).prop_map(|(specs, linked)| {
        let hits: Vec<RankedHit> =
            specs.into_iter().enumerate().map(|(i, (p, s))| hit(i, p, s.join(" "))).collect();
        let linked_prs = hits
            .iter()
            .zip(&linked)
            .filter(|(h, l)| **l && h.partition == Partition::Ticket)
            .map(|(h, _)| LinkedPr { ticket_key: h.source_key.clone(), pr: format!("acme/api#{}", h.source_key.len() * 7) })
            .collect();
        EvidenceBundle { query: QuerySpec::new("login crash", now()), hits, linked_prs, retrieved_at: now() }
    })
}

proptest! {
    #[test]
    fn extractive_output_is_grounded(b in bundle()) {
        let s = generate_extractive(&b);
        prop_assert!(s.grounding >= 0.9, "grounding {} for steps {:?}", s.grounding, s.steps);
        prop_assert!((grounding_score(&s.steps, &b) - s.grounding).abs() < 1e-12);
    }

    #[test]
    fn evidence_links_resolve_to_bundle_hits(b in bundle()) {
        let s = generate_extractive(&b);
        prop_assert!(!s.evidence_links.is_empty());
        for link in &s.evidence_links {
            let h = b.hit(&link.chunk_id);
            prop_assert!(h.is_some(), "{} not in bundle", link.chunk_id);
            prop_assert_eq!(&h.unwrap().source_key, &link.source_key);
        }
    }

    #[test]
    fn extractive_generation_is_pure(b in bundle()) {
        let (x, y) = (generate_extractive(&b), generate_extractive(&b));
        prop_assert_ne!(&x.suggestion_id, &y.suggestion_id);
        prop_assert_eq!(x.steps, y.steps);
        prop_assert_eq!(x.evidence_links, y.evidence_links);
        prop_assert_eq!(x.rationale, y.rationale);
        prop_assert_eq!(x.grounding, y.grounding);
        prop_assert_eq!(x.confidence, y.confidence);
        prop_assert_eq!(x.created_at, y.created_at);
    }

    #[test]
    fn unsupported_step_never_raises_grounding(b in bundle(), extra in "[q-z]{3,8}( [q-z]{3,8}){0,4}") {
        let mut steps = generate_extractive(&b).steps;
        let before = grounding_score(&steps, &b);
        steps.push(format!("zz{extra}"));
        prop_assert!(grounding_score(&steps, &b) <= before);
    }

    #[test]
    fn prompt_stays_within_budget(b in bundle(), budget in 20usize..300) {
        if let Ok(p) = build_prompt(&b, "Login page crashes after the token expired.", budget) {
            prop_assert!(p.token_count <= budget);
            prop_assert_eq!(word_count(&p.render()), p.token_count);
        }
    }
}

#[test]
fn empty_bundle_escalates() {
    let b = EvidenceBundle { query: QuerySpec::new("anything", now()), hits: vec![], linked_prs: vec![], retrieved_at: now() };
    let s = generate_extractive(&b);
    assert_eq!(s.steps, [ESCALATION_STEP]);
    assert!(s.evidence_links.is_empty());
    assert_eq!(s.grounding, 0.0);
}
