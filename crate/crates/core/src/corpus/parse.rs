use std::collections::HashSet;
use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::normalize::is_stack_trace_line;
use super::{is_issue_key, Comment, IngestError, PrState, Priority, PullRequest, Ticket};

#[derive(Deserialize)]
struct RawComment {
    #[serde(default)]
    author: Option<String>,
    #[serde(default)]
    body: Option<String>,
    created_at: DateTime<Utc>,
}

#[derive(Deserialize)]
struct RawTicket {
    key: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    priority: Option<String>,
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    resolution: Option<String>,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
    #[serde(default)]
    comments: Option<Vec<RawComment>>,
}

#[derive(Deserialize)]
struct RawPr {
    repo: String,
    number: u64,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    commit_messages: Option<Vec<String>>,
    #[serde(default)]
    diff: Option<String>,
    #[serde(default)]
    review_comments: Option<Vec<String>>,
    state: String,
    #[serde(default)]
    merged_at: Option<DateTime<Utc>>,
    #[serde(default)]
    created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    updated_at: Option<DateTime<Utc>>,
}

/// Yields `(1-based line number, line)` for every non-blank line.
fn records(stream: impl BufRead) -> impl Iterator<Item = Result<(usize, String), IngestError>> {
    stream
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(IngestError::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn decode<T: serde::de::DeserializeOwned>(line_no: usize, line: &str) -> Result<T, IngestError> {
    serde_json::from_str(line)
        .map_err(|e| IngestError::Malformed { line: line_no, message: e.to_string() })
}

/// Parses a JIRA JSONL export. Tickets are returned in file order.
pub fn parse_jira_export(stream: impl BufRead) -> Result<Vec<Ticket>, IngestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in records(stream) {
        let (line, text) = rec?;
        let raw: RawTicket = decode(line, &text)?;
        if !is_issue_key(&raw.key) {
            return Err(IngestError::Invalid {
                line,
                message: format!("key {:?} is not an issue key", raw.key),
            });
        }
        if raw.created_at > raw.updated_at {
            return Err(IngestError::Invalid {
                line,
                message: format!("{}: created_at is after updated_at", raw.key),
            });
        }
        if !seen.insert(raw.key.clone()) {
            return Err(IngestError::DuplicateKey(raw.key));
        }
        let comments = raw
            .comments
            .unwrap_or_default()
            .into_iter()
            .map(|c| {
                let body = c.body.unwrap_or_default();
                let contains_stacktrace = body.lines().any(is_stack_trace_line);
                Comment { author: c.author.unwrap_or_default(), body, created_at: c.created_at, contains_stacktrace }
            })
            .collect();
        out.push(Ticket {
            key: raw.key,
            title: raw.title.unwrap_or_default(),
            description: raw.description.unwrap_or_default(),
            priority: raw.priority.as_deref().map(Priority::parse_lenient).unwrap_or_default(),
            status: raw.status.unwrap_or_default(),
            resolution: raw.resolution,
            created_at: raw.created_at,
            updated_at: raw.updated_at,
            comments,
        });
    }
    Ok(out)
}

/// Parses a GitHub pull-request JSONL export. PRs are returned in file order.
pub fn parse_github_export(stream: impl BufRead) -> Result<Vec<PullRequest>, IngestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in records(stream) {
        let (line, text) = rec?;
        let raw: RawPr = decode(line, &text)?;
        if raw.number == 0 {
            return Err(IngestError::Invalid { line, message: "number must be positive".into() });
        }
        let state = match raw.state.trim().to_ascii_lowercase().as_str() {
            "open" => PrState::Open,
            "merged" => PrState::Merged,
            "closed" => PrState::Closed,
            other => {
                return Err(IngestError::Invalid { line, message: format!("unknown state {other:?}") })
            }
        };
        match (state, raw.merged_at) {
            (PrState::Merged, None) => {
                return Err(IngestError::Invalid { line, message: "merged_at required for merged PR".into() })
            }
            (PrState::Open | PrState::Closed, Some(_)) => {
                return Err(IngestError::Invalid {
                    line,
                    message: "merged_at present but state is not merged".into(),
                })
            }
            _ => {}
        }
        let pr = PullRequest {
            repo: raw.repo,
            number: raw.number,
            title: raw.title.unwrap_or_default(),
            body: raw.body.unwrap_or_default(),
            commit_messages: raw.commit_messages.unwrap_or_default(),
            diff_text: raw.diff.unwrap_or_default(),
            review_comments: raw.review_comments.unwrap_or_default(),
            merged_at: raw.merged_at,
            state,
            created_at: raw.created_at,
            updated_at: raw.updated_at,
        };
        if !seen.insert(pr.id()) {
            return Err(IngestError::DuplicatePr(pr.id().to_string()));
        }
        out.push(pr);
    }
    Ok(out)
}
