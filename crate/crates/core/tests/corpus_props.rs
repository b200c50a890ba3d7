use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use proptest::prelude::*;
use ticketrag::corpus::{
    clean_text, extract_issue_keys, link_tickets_prs, normalize_ticket, parse_github_export, parse_jira_export,
    CleaningConfig, Comment, Corpus, Partition, PrState, Priority, PullRequest, Ticket,
};
use ticketrag::synthetic::{github_jsonl, jira_jsonl, planted_duplicate_corpus};

const KEYS: [&str; 6] = ["AB-1", "AB-2", "CD-3", "EF-4", "GH-5", "ZZ-9"];

fn at(days: i64) -> DateTime<Utc> {
    DateTime::UNIX_EPOCH + Duration::days(20_000 + days)
}

fn ticket(key: &str, description: String) -> Ticket {
    Ticket {
        key: key.to_owned(),
        title: format!("Issue {key}"),
        description,
        priority: Priority::Major,
        status: "Open".into(),
        resolution: None,
        created_at: at(0),
        updated_at: at(1),
        comments: vec![Comment { author: "ana".into(), body: "seen again".into(), created_at: at(1), contains_stacktrace: false }],
    }
}

fn pr(number: u64, title: String, body: String, commits: Vec<String>) -> PullRequest {
    PullRequest {
        repo: "acme/web".into(),
        number,
        title,
        body,
        commit_messages: commits,
        diff_text: String::new(),
        review_comments: vec![],
        merged_at: Some(at(2)),
        state: PrState::Merged,
        created_at: None,
        updated_at: None,
    }
}

fn field() -> impl Strategy<Value = String> {
    prop::collection::vec(prop_oneof![prop::sample::select(KEYS.to_vec()).prop_map(str::to_owned), "[a-z]{1,6}"], 0..5)
        .prop_map(|w| w.join(" "))
}

fn prs() -> impl Strategy<Value = Vec<PullRequest>> {
    prop::collection::vec((field(), field(), prop::collection::vec(field(), 0..3)), 0..6).prop_map(|v| {
        v.into_iter().enumerate().map(|(i, (t, b, c))| pr(i as u64 + 1, t, b, c)).collect()
    })
}

/// Nested-loop join: one edge per (ticket, PR) whose fields mention the key.
fn brute_force(tickets: &[Ticket], prs: &[PullRequest]) -> BTreeSet<(String, u64)> {
    let mut out = BTreeSet::new();
    for p in prs {
        let mut text_keys = extract_issue_keys(&p.title);
        text_keys.extend(extract_issue_keys(&p.body));
        for m in &p.commit_messages {
            text_keys.extend(extract_issue_keys(m));
        }
        for t in tickets {
            if text_keys.contains(&t.key) {
                out.insert((t.key.clone(), p.number));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn link_join_matches_nested_loops(mask in prop::collection::vec(any::<bool>(), KEYS.len()), prs in prs()) {
        let tickets: Vec<Ticket> = KEYS.iter().zip(&mask).filter(|(_, m)| **m).map(|(k, _)| ticket(k, "x".into())).collect();
        let report = link_tickets_prs(&tickets, &prs);
        let got: Vec<(String, u64)> = report.edges.iter().map(|e| (e.ticket_key.clone(), e.pr_number)).collect();
        let want = brute_force(&tickets, &prs);
        prop_assert_eq!(got.len(), want.len());
        prop_assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), want);
    }

    #[test]
    fn cleaning_is_idempotent(text in "[ a-zA-Z0-9:.\\n\\t#-]{0,120}") {
        let cfg = CleaningConfig::default();
        let once = clean_text(&text, &cfg);
        prop_assert_eq!(clean_text(&once, &cfg), once);
    }

    #[test]
    fn normalized_ticket_text_is_a_fixed_point(
        description in "(Steps to reproduce|Expected result|Actual result|[a-z ]{0,20}|\\n| {2,4}){0,8}",
    ) {
        let cfg = CleaningConfig::default();
        for c in normalize_ticket(&ticket("AB-1", description), &cfg) {
            prop_assert!(!c.text.is_empty());
            prop_assert_eq!(clean_text(&c.text, &cfg), c.text.clone());
        }
    }
}

#[test]
fn every_chunk_resolves_to_one_source() {
    let now: DateTime<Utc> = "2025-03-01T00:00:00Z".parse().unwrap();
    let p = planted_duplicate_corpus(120, 4, now);
    let tickets = parse_jira_export(jira_jsonl(&p.tickets).as_bytes()).unwrap();
    let prs = parse_github_export(github_jsonl(&p.prs).as_bytes()).unwrap();
    let corpus = Corpus::from_parts(tickets, prs, &CleaningConfig::default());
    assert!(!corpus.chunks.is_empty());
    for c in &corpus.chunks {
        assert!(!c.text.is_empty(), "{} is empty", c.chunk_id);
        assert!(Partition::ALL.contains(&c.partition));
        let tickets = corpus.tickets.iter().filter(|t| t.key == c.source_key).count();
        let prs = corpus.prs.iter().filter(|p| p.id().to_string() == c.source_key).count();
        assert_eq!(tickets + prs, 1, "{} resolves to {} sources", c.chunk_id, tickets + prs);
        let expect_pr = c.partition == Partition::Pr;
        assert_eq!(prs == 1, expect_pr, "{} partition does not match its source", c.chunk_id);
    }
    corpus.validate().unwrap();
}
