use std::collections::HashMap;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;

use super::{ArtifactChunk, DiffSummary, Partition, PullRequest, Ticket};

pub const DEFAULT_BOILERPLATE_HEADERS: [&str; 4] =
    ["Steps to reproduce", "Expected result", "Actual result", "Environment"];

/// Template section headers stripped during cleaning. Section bodies are kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleaningConfig {
    pub boilerplate_headers: Vec<String>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            boilerplate_headers: DEFAULT_BOILERPLATE_HEADERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

static CALL_FRAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bat [^\s(]+\(").expect("frame regex"));

/// Stack trace / error log heuristic: a call frame `at <token>(`, or any of
/// `Exception`, `Traceback`, `Error:`.
pub fn is_stack_trace_line(line: &str) -> bool {
    line.contains("Exception")
        || line.contains("Traceback")
        || line.contains("Error:")
        || CALL_FRAME.is_match(line)
}

/// Removes every leading boilerplate header (case-insensitive) from `line`.
fn strip_headers<'a>(mut line: &'a str, headers: &[String]) -> &'a str {
    'outer: loop {
        for h in headers {
            let Some(prefix) = line.get(..h.len()) else { continue };
            if !prefix.eq_ignore_ascii_case(h) {
                continue;
            }
            let rest = &line[h.len()..];
            if rest.chars().next().is_some_and(char::is_alphanumeric) {
                continue;
            }
            line = rest.trim_start_matches(|c: char| c == ':' || c == '-' || c.is_whitespace());
            continue 'outer;
        }
        return line;
    }
}

/// Normalizes free text: boilerplate headers dropped, whitespace collapsed,
/// empty lines dropped, everything lowercased except stack-trace lines, which
/// keep their casing. Lines are joined with `\n`.
pub fn clean_text(text: &str, cfg: &CleaningConfig) -> String {
    let mut out: Vec<String> = Vec::new();
    for raw in text.lines() {
        let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        let line = strip_headers(&collapsed, &cfg.boilerplate_headers);
        if line.is_empty() {
            continue;
        }
        if is_stack_trace_line(line) {
            out.push(line.to_owned());
        } else {
            out.push(line.to_lowercase());
        }
    }
    out.join("\n")
}

/// One ticket-partition chunk plus one comment-partition chunk per comment
/// that is non-empty after cleaning.
pub fn normalize_ticket(t: &Ticket, cfg: &CleaningConfig) -> Vec<ArtifactChunk> {
    let mut chunks = Vec::with_capacity(1 + t.comments.len());
    let text = clean_text(&format!("{}\n{}", t.title, t.description), cfg);
    if !text.is_empty() {
        chunks.push(ArtifactChunk {
            chunk_id: format!("ticket:{}", t.key),
            partition: Partition::Ticket,
            text,
            timestamp: t.updated_at,
            source_key: t.key.clone(),
        });
    }
    for (i, c) in t.comments.iter().enumerate() {
        let text = clean_text(&c.body, cfg);
        if text.is_empty() {
            continue;
        }
        chunks.push(ArtifactChunk {
            chunk_id: format!("comment:{}:{i}", t.key),
            partition: Partition::Comment,
            text,
            timestamp: c.created_at,
            source_key: t.key.clone(),
        });
    }
    chunks
}

/// The single pr-partition chunk for a pull request.
///
/// Timestamp is `merged_at`, else the latest of `updated_at`/`created_at`,
/// else the Unix epoch.
pub fn normalize_pr(pr: &PullRequest, summary: &DiffSummary, cfg: &CleaningConfig) -> ArtifactChunk {
    let mut parts: Vec<&str> = vec![&pr.title, &pr.body];
    parts.extend(pr.commit_messages.iter().map(String::as_str));
    parts.extend(summary.changed_functions.iter().map(String::as_str));
    parts.extend(pr.review_comments.iter().map(String::as_str));
    let mut text = clean_text(&parts.join("\n"), cfg);
    if text.is_empty() {
        text = pr.id().to_string();
    }
    let timestamp = pr
        .merged_at
        .or_else(|| pr.updated_at.max(pr.created_at))
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    ArtifactChunk {
        chunk_id: format!("pr:{}", pr.id()),
        partition: Partition::Pr,
        text,
        timestamp,
        source_key: pr.id().to_string(),
    }
}

/// Drops exact duplicates (same partition and text), keeping the chunk with
/// the earliest timestamp. Survivors keep their input order.
pub fn dedup_chunks(chunks: Vec<ArtifactChunk>) -> Vec<ArtifactChunk> {
    let mut best: HashMap<(Partition, &str), usize> = HashMap::new();
    for (i, c) in chunks.iter().enumerate() {
        best.entry((c.partition, c.text.as_str()))
            .and_modify(|j| {
                let cur = &chunks[*j];
                if (c.timestamp, &c.chunk_id) < (cur.timestamp, &cur.chunk_id) {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut keep = vec![false; chunks.len()];
    for i in best.into_values() {
        keep[i] = true;
    }
    chunks.into_iter().zip(keep).filter_map(|(c, k)| k.then_some(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{summarize_diff, Comment, PrState, Priority};
    use chrono::TimeZone;

    fn ts(day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, day, 0, 0, 0).unwrap()
    }

    fn ticket(desc: &str, comments: &[&str]) -> Ticket {
        Ticket {
            key: "PROJ-1".into(),
            title: "UI crash on toggle".into(),
            description: desc.into(),
            priority: Priority::Major,
            status: "open".into(),
            resolution: None,
            created_at: ts(1),
            updated_at: ts(2),
            comments: comments
                .iter()
                .map(|b| Comment { author: "a".into(), body: b.to_string(), created_at: ts(3), contains_stacktrace: false })
                .collect(),
        }
    }

    #[test]
    fn boilerplate_removed_body_kept() {
        let chunks = normalize_ticket(&ticket("Steps to reproduce\nClick toggle", &[]), &CleaningConfig::default());
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].text.contains("click toggle"));
        assert!(!chunks[0].text.contains("steps to reproduce"));
        assert_eq!(chunks[0].chunk_id, "ticket:PROJ-1");
    }

    #[test]
    fn inline_header_stripped() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("Expected result: no crash", &cfg), "no crash");
        assert_eq!(clean_text("Environmental factors", &cfg), "environmental factors");
    }

    #[test]
    fn stack_trace_casing_preserved() {
        let chunks = normalize_ticket(&ticket("", &["Saw this:\n  at render() line 42"]), &CleaningConfig::default());
        assert_eq!(chunks.len(), 2);
        let c = &chunks[1];
        assert_eq!(c.partition, Partition::Comment);
        assert_eq!(c.chunk_id, "comment:PROJ-1:0");
        assert!(c.text.contains("at render() line 42"));
        assert!(c.text.contains("saw this:"));
        let c = clean_text("NullPointerException in Foo\nTraceback (most recent)\nTypeError: bad", &CleaningConfig::default());
        assert_eq!(c, "NullPointerException in Foo\nTraceback (most recent)\nTypeError: bad");
    }

    #[test]
    fn title_only() {
        let chunks = normalize_ticket(&ticket("", &["   ", "Steps to reproduce"]), &CleaningConfig::default());
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, "ui crash on toggle");
    }

    #[test]
    fn idempotent_on_tricky_input() {
        let cfg = CleaningConfig::default();
        for s in [
            "Steps to reproduce: Expected result: x",
            "Look AT Foo(bar) now",
            "  Actual   result\n\n  TypeError: boom \n at a.b(c.js:1)",
        ] {
            let once = clean_text(s, &cfg);
            assert_eq!(clean_text(&once, &cfg), once, "{s:?}");
        }
    }

    fn pr() -> PullRequest {
        PullRequest {
            repo: "acme/web".into(),
            number: 42,
            title: "Fix: safeguard concurrent rendering".into(),
            body: String::new(),
            commit_messages: vec![],
            diff_text: "@@ -1,4 +1,6 @@ function render()\n+x".into(),
            review_comments: vec!["LGTM".into()],
            merged_at: Some(ts(9)),
            state: PrState::Merged,
            created_at: None,
            updated_at: None,
        }
    }

    #[test]
    fn pr_chunk() {
        let p = pr();
        let c = normalize_pr(&p, &summarize_diff(&p.diff_text), &CleaningConfig::default());
        assert_eq!(c.chunk_id, "pr:acme/web#42");
        assert_eq!(c.source_key, "acme/web#42");
        assert!(c.text.contains("safeguard concurrent rendering"));
        assert!(c.text.contains("function render()"));
        assert!(!c.text.is_empty());
        assert_eq!(c.timestamp, ts(9));
    }

    #[test]
    fn unmerged_pr_uses_latest_timestamp() {
        let mut p = pr();
        p.merged_at = None;
        p.state = PrState::Open;
        p.created_at = Some(ts(4));
        p.updated_at = Some(ts(6));
        let c = normalize_pr(&p, &DiffSummary::default(), &CleaningConfig::default());
        assert_eq!(c.timestamp, ts(6));
    }

    #[test]
    fn dedup_keeps_earliest() {
        let mk = |id: &str, day| ArtifactChunk {
            chunk_id: id.into(),
            partition: Partition::Comment,
            text: "same".into(),
            timestamp: ts(day),
            source_key: "PROJ-1".into(),
        };
        let out = dedup_chunks(vec![mk("comment:PROJ-1:0", 5), mk("comment:PROJ-1:1", 2), mk("x", 7)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].chunk_id, "comment:PROJ-1:1");
    }
}
