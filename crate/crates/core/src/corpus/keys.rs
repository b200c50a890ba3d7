use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{LinkEdge, PullRequest, SourceField, Ticket};

static ISSUE_KEY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[A-Z]{2,10}-[0-9]{1,8}\b").expect("issue key regex"));
static ISSUE_KEY_EXACT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Z]{2,10}-[0-9]{1,8}$").expect("issue key regex"));

/// All issue keys in `text`, deduplicated, in first-occurrence order.
///
/// A key is 2 to 10 uppercase ASCII letters, a dash and 1 to 8 digits, and
/// must not be glued to surrounding word characters.
pub fn extract_issue_keys(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    ISSUE_KEY
        .find_iter(text)
        .map(|m| m.as_str())
        .filter(|k| seen.insert(*k))
        .map(str::to_owned)
        .collect()
}

pub fn is_issue_key(s: &str) -> bool {
    ISSUE_KEY_EXACT.is_match(s)
}

/// Warning for a PR that references a key with no ticket in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "dangling_key")]
pub struct DanglingKey {
    pub key: String,
    pub pr: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkReport {
    pub edges: Vec<LinkEdge>,
    pub warnings: Vec<DanglingKey>,
}

/// Joins PRs to tickets through issue keys found in the PR title, body and
/// commit messages (scanned in that order; the first field naming a key is
/// recorded as the edge's source).
pub fn link_tickets_prs(tickets: &[Ticket], prs: &[PullRequest]) -> LinkReport {
    let known: HashSet<&str> = tickets.iter().map(|t| t.key.as_str()).collect();
    let mut report = LinkReport::default();
    for pr in prs {
        let mut found: Vec<(String, SourceField)> = Vec::new();
        let mut seen = HashSet::new();
        let fields = std::iter::once((pr.title.as_str(), SourceField::PrTitle))
            .chain(std::iter::once((pr.body.as_str(), SourceField::PrBody)))
            .chain(pr.commit_messages.iter().map(|m| (m.as_str(), SourceField::CommitMessage)));
        for (text, field) in fields {
            for key in extract_issue_keys(text) {
                if seen.insert(key.clone()) {
                    found.push((key, field));
                }
            }
        }
        for (key, field) in found {
            if known.contains(key.as_str()) {
                report.edges.push(LinkEdge {
                    ticket_key: key,
                    pr_repo: pr.repo.clone(),
                    pr_number: pr.number,
                    source_field: field,
                });
            } else {
                report.warnings.push(DanglingKey { key, pr: pr.id().to_string() });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PrState, Priority};
    use chrono::{TimeZone, Utc};

    fn ticket(key: &str) -> Ticket {
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        Ticket {
            key: key.into(),
            title: "t".into(),
            description: String::new(),
            priority: Priority::Unknown,
            status: "open".into(),
            resolution: None,
            created_at: t,
            updated_at: t,
            comments: vec![],
        }
    }

    fn pr(number: u64, title: &str, body: &str, commits: &[&str]) -> PullRequest {
        PullRequest {
            repo: "acme/web".into(),
            number,
            title: title.into(),
            body: body.into(),
            commit_messages: commits.iter().map(|s| s.to_string()).collect(),
            diff_text: String::new(),
            review_comments: vec![],
            merged_at: None,
            state: PrState::Open,
            created_at: None,
            updated_at: None,
        }
    }

    #[test]
    fn table_example() {
        assert_eq!(extract_issue_keys("Fixes PROJECT-123 in commit #ab12cd"), vec!["PROJECT-123"]);
        assert!(extract_issue_keys("").is_empty());
        assert_eq!(extract_issue_keys("ABC-1, ABC-2, abc-3, XABC-1x"), vec!["ABC-1", "ABC-2"]);
    }

    #[test]
    fn dedup_keeps_first_occurrence_order() {
        assert_eq!(extract_issue_keys("ZZ-2 then AA-1 then ZZ-2"), vec!["ZZ-2", "AA-1"]);
    }

    #[test]
    fn body_link() {
        let r = link_tickets_prs(&[ticket("PROJECT-123")], &[pr(1, "t", "Fixes PROJECT-123", &[])]);
        assert_eq!(r.edges.len(), 1);
        assert_eq!(r.edges[0].source_field, SourceField::PrBody);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn no_keys_no_edges() {
        let r = link_tickets_prs(&[ticket("AB-1")], &[pr(1, "refactor", "cleanup", &["wip"])]);
        assert!(r.edges.is_empty() && r.warnings.is_empty());
    }

    #[test]
    fn dangling_key_warns() {
        let r = link_tickets_prs(&[ticket("AB-1")], &[pr(9, "t", "see GHOST-9", &[])]);
        assert!(r.edges.is_empty());
        assert_eq!(r.warnings, vec![DanglingKey { key: "GHOST-9".into(), pr: "acme/web#9".into() }]);
        let json = serde_json::to_string(&r.warnings[0]).unwrap();
        assert_eq!(json, r#"{"kind":"dangling_key","key":"GHOST-9","pr":"acme/web#9"}"#);
    }

    #[test]
    fn first_field_wins_and_no_duplicates() {
        let r = link_tickets_prs(
            &[ticket("AB-1"), ticket("CD-2")],
            &[pr(3, "AB-1 fix", "AB-1 again", &["CD-2", "AB-1"])],
        );
        assert_eq!(r.edges.len(), 2);
        assert_eq!(r.edges[0].source_field, SourceField::PrTitle);
        assert_eq!(r.edges[1].ticket_key, "CD-2");
        assert_eq!(r.edges[1].source_field, SourceField::CommitMessage);
    }
}
