//! Issue-tracker and pull-request ingestion.
//!
//! JIRA and GitHub exports arrive as JSONL dumps. They are parsed into
//! [`Ticket`]s and [`PullRequest`]s, joined through explicit issue keys into
//! [`LinkEdge`]s, and normalized into [`ArtifactChunk`]s, the unit every index
//! works with.

mod diff;
mod keys;
mod normalize;
mod parse;

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use diff::{summarize_diff, DiffSummary};
pub use keys::{extract_issue_keys, is_issue_key, link_tickets_prs, DanglingKey, LinkReport};
pub use normalize::{
    clean_text, dedup_chunks, is_stack_trace_line, normalize_pr, normalize_ticket, CleaningConfig,
    DEFAULT_BOILERPLATE_HEADERS,
};
pub use parse::{parse_github_export, parse_jira_export};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("duplicate ticket key {0}")]
    DuplicateKey(String),
    #[error("duplicate pull request {0}")]
    DuplicatePr(String),
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Blocker,
    Critical,
    Major,
    Minor,
    Trivial,
    #[default]
    Unknown,
}

impl Priority {
    /// Case-insensitive; anything unrecognized maps to `Unknown`.
    pub fn parse_lenient(s: &str) -> Priority {
        match s.trim().to_ascii_lowercase().as_str() {
            "blocker" => Priority::Blocker,
            "critical" => Priority::Critical,
            "major" => Priority::Major,
            "minor" => Priority::Minor,
            "trivial" => Priority::Trivial,
            _ => Priority::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub author: String,
    pub body: String,
    pub created_at: DateTime<Utc>,
    pub contains_stacktrace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ticket {
    pub key: String,
    pub title: String,
    pub description: String,
    pub priority: Priority,
    pub status: String,
    pub resolution: Option<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub comments: Vec<Comment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrState {
    Open,
    Merged,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullRequest {
    pub repo: String,
    pub number: u64,
    pub title: String,
    pub body: String,
    pub commit_messages: Vec<String>,
    pub diff_text: String,
    pub review_comments: Vec<String>,
    pub merged_at: Option<DateTime<Utc>>,
    pub state: PrState,
    /// Not part of the minimal export schema; used as a timestamp fallback
    /// for unmerged PRs when present.
    #[serde(default)]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub updated_at: Option<DateTime<Utc>>,
}

impl PullRequest {
    pub fn id(&self) -> PrId {
        PrId { repo: self.repo.clone(), number: self.number }
    }
}

/// `repo#number`, the identifier used for PR source keys and links.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrId {
    pub repo: String,
    pub number: u64,
}

impl fmt::Display for PrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.repo, self.number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceField {
    PrBody,
    CommitMessage,
    PrTitle,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkEdge {
    pub ticket_key: String,
    pub pr_repo: String,
    pub pr_number: u64,
    pub source_field: SourceField,
}

impl LinkEdge {
    pub fn pr_id(&self) -> PrId {
        PrId { repo: self.pr_repo.clone(), number: self.pr_number }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Ticket,
    Comment,
    Pr,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Ticket, Partition::Comment, Partition::Pr];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Ticket => "ticket",
            Partition::Comment => "comment",
            Partition::Pr => "pr",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Partition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ticket" => Ok(Partition::Ticket),
            "comment" => Ok(Partition::Comment),
            "pr" => Ok(Partition::Pr),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactChunk {
    pub chunk_id: String,
    pub partition: Partition,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    pub source_key: String,
}

/// A fully ingested corpus: parsed sources, links, and deduplicated chunks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub tickets: Vec<Ticket>,
    pub prs: Vec<PullRequest>,
    pub links: Vec<LinkEdge>,
    pub warnings: Vec<DanglingKey>,
    pub chunks: Vec<ArtifactChunk>,
}

/// Counts printed after ingestion, one per source column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub tickets: usize,
    pub comments: usize,
    pub prs: usize,
    pub links: usize,
    pub dangling_keys: usize,
    pub ticket_chunks: usize,
    pub comment_chunks: usize,
    pub pr_chunks: usize,
}

impl Corpus {
    pub fn from_exports(
        jira: impl BufRead,
        github: impl BufRead,
        cfg: &CleaningConfig,
    ) -> Result<Corpus, IngestError> {
        let tickets = parse_jira_export(jira)?;
        let prs = parse_github_export(github)?;
        Ok(Corpus::from_parts(tickets, prs, cfg))
    }

    pub fn from_parts(tickets: Vec<Ticket>, prs: Vec<PullRequest>, cfg: &CleaningConfig) -> Corpus {
        let LinkReport { edges, warnings } = link_tickets_prs(&tickets, &prs);
        let mut chunks: Vec<ArtifactChunk> =
            tickets.iter().flat_map(|t| normalize_ticket(t, cfg)).collect();
        chunks.extend(prs.iter().map(|pr| normalize_pr(pr, &summarize_diff(&pr.diff_text), cfg)));
        let chunks = dedup_chunks(chunks);
        Corpus { tickets, prs, links: edges, warnings, chunks }
    }

    pub fn counts(&self) -> CorpusCounts {
        let by = |p: Partition| self.chunks.iter().filter(|c| c.partition == p).count();
        CorpusCounts {
            tickets: self.tickets.len(),
            comments: self.tickets.iter().map(|t| t.comments.len()).sum(),
            prs: self.prs.len(),
            links: self.links.len(),
            dangling_keys: self.warnings.len(),
            ticket_chunks: by(Partition::Ticket),
            comment_chunks: by(Partition::Comment),
            pr_chunks: by(Partition::Pr),
        }
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&ArtifactChunk> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }

    pub fn ticket(&self, key: &str) -> Option<&Ticket> {
        self.tickets.iter().find(|t| t.key == key)
    }

    /// Edges whose ticket is `key`, in corpus order.
    pub fn links_for<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a LinkEdge> + 'a {
        self.links.iter().filter(move |e| e.ticket_key == key)
    }

    /// Checks that every chunk id is unique and every source key resolves to
    /// exactly one ticket or pull request.
    pub fn validate(&self) -> Result<(), String> {
        let keys: HashSet<&str> = self.tickets.iter().map(|t| t.key.as_str()).collect();
        let prs: HashSet<String> = self.prs.iter().map(|p| p.id().to_string()).collect();
        let mut seen = HashSet::new();
        for c in &self.chunks {
            if !seen.insert(c.chunk_id.as_str()) {
                return Err(format!("duplicate chunk id {}", c.chunk_id));
            }
            if c.text.is_empty() {
                return Err(format!("chunk {} has empty text", c.chunk_id));
            }
            let ok = match c.partition {
                Partition::Ticket | Partition::Comment => keys.contains(c.source_key.as_str()),
                Partition::Pr => prs.contains(&c.source_key),
            };
            if !ok {
                return Err(format!("chunk {} source {} does not resolve", c.chunk_id, c.source_key));
            }
        }
        Ok(())
    }
}
