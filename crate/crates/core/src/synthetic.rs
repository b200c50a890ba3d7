//! Seeded synthetic support corpus with one planted near-duplicate.
//!
//! Useful for demos, smoke tests and end-to-end checks where a known answer
//! must exist: the probe ticket is not in the corpus, one historical ticket
//! describes the same failure, and a merged PR references that ticket.

use chrono::{DateTime, Duration, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{Comment, PrState, Priority, PullRequest, Ticket};

const PROJECT: &str = "SUP";
const REPO: &str = "acme/web";

const COMPONENTS: &[&str] = &[
    "billing service",
    "login page",
    "search indexer",
    "notification worker",
    "export job",
    "report builder",
    "upload widget",
    "settings panel",
    "calendar sync",
    "audit log",
    "webhook dispatcher",
    "invoice renderer",
    "session cache",
    "mobile gateway",
    "permissions editor",
    "csv importer",
];

const SYMPTOMS: &[&str] = &[
    "times out",
    "returns a 500 error",
    "shows stale data",
    "hangs indefinitely",
    "drops records",
    "duplicates entries",
    "rejects valid input",
    "leaks memory",
    "logs the user out",
    "renders garbled text",
];

const TRIGGERS: &[&str] = &[
    "after a password reset",
    "when the payload exceeds 10 MB",
    "under concurrent edits",
    "for accounts in the EU region",
    "after the nightly deploy",
    "when the locale is set to Japanese",
    "if the browser tab is backgrounded",
    "on the first request after a cold start",
    "with more than 500 rows selected",
    "when the retry queue is full",
];

const FIXES: &[&str] = &[
    "raised the connection pool limit",
    "added pagination to the query",
    "invalidated the cache on write",
    "switched the parser to streaming mode",
    "added an index on the lookup column",
    "retried the upstream call with backoff",
    "escaped the user-supplied field",
    "moved the work to a background queue",
    "fixed the timezone conversion",
    "deduplicated events by idempotency key",
];

const EXCEPTIONS: &[&str] = &[
    "java.util.concurrent.TimeoutException: upstream did not respond",
    "java.lang.IllegalStateException: pool exhausted",
    "java.io.IOException: stream closed",
    "java.lang.IllegalArgumentException: invalid encoding",
];

const PEOPLE: &[&str] = &["ana", "bo", "chen", "dara", "eli", "farah", "gus", "hana"];

const PROBE_TITLE: &str = "Dashboard goes blank when switching to dark mode";
const PROBE_DESCRIPTION: &str = "Steps to reproduce\n\
Open the analytics dashboard and switch the theme to dark mode from the user menu.\n\
Actual result\n\
The dashboard goes blank and the console shows an error.\n\
java.lang.NullPointerException: palette is null\n\
    at com.acme.ui.ThemeProvider.render(ThemeProvider.java:88)";

const DUP_TITLE: &str = "Dashboard blank after switching theme to dark mode";
const DUP_DESCRIPTION: &str = "Steps to reproduce\n\
Log in, open the analytics dashboard and switch to dark mode.\n\
Actual result\n\
Blank dashboard; widgets never render.\n\
java.lang.NullPointerException: palette is null\n\
    at com.acme.ui.ThemeProvider.render(ThemeProvider.java:88)";
const DUP_FIX_COMMENT: &str = "Root cause: ThemeProvider.render() reads the dark palette before it is loaded. \
Fixed by adding a null check in ThemeProvider.render() that falls back to the default palette. \
Apply the change from the linked PR to the dashboard theme code.";

/// A generated corpus plus the answer key for its planted duplicate.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub tickets: Vec<Ticket>,
    pub prs: Vec<PullRequest>,
    /// New ticket, absent from `tickets`, that duplicates `duplicate_key`.
    pub probe: Ticket,
    pub duplicate_key: String,
    /// `owner/repo#number` of the merged fix for the duplicate.
    pub fix_pr: String,
}

impl PlantedCorpus {
    /// Probe text as a user would submit it: title, blank line, description.
    pub fn probe_text(&self) -> String {
        format!("{}\n\n{}", self.probe.title, self.probe.description)
    }
}

fn comment(author: &str, body: String, at: DateTime<Utc>) -> Comment {
    let contains_stacktrace = body.lines().any(crate::corpus::is_stack_trace_line);
    Comment { author: author.to_owned(), body, created_at: at, contains_stacktrace }
}

fn filler_ticket(rng: &mut ChaCha8Rng, key: String, created: DateTime<Utc>) -> (Ticket, &'static str) {
    let component = *COMPONENTS.choose(rng).expect("non-empty");
    let symptom = *SYMPTOMS.choose(rng).expect("non-empty");
    let trigger = *TRIGGERS.choose(rng).expect("non-empty");
    let fix = *FIXES.choose(rng).expect("non-empty");
    let mut description = format!(
        "Steps to reproduce\nUse the {component} {trigger}.\nExpected result\nThe {component} works normally.\nActual result\nThe {component} {symptom}."
    );
    if rng.random_bool(0.3) {
        let ex = *EXCEPTIONS.choose(rng).expect("non-empty");
        description.push_str(&format!("\n{ex}\n    at com.acme.core.Worker.run(Worker.java:{})", rng.random_range(10..400)));
    }
    let priority = [Priority::Blocker, Priority::Critical, Priority::Major, Priority::Minor, Priority::Trivial]
        [rng.random_range(0..5)];
    let resolved = rng.random_bool(0.8);
    let mut comments = vec![comment(
        PEOPLE.choose(rng).expect("non-empty"),
        format!("Seeing this too, the {component} {symptom} {trigger}."),
        created + Duration::hours(rng.random_range(1..48)),
    )];
    if resolved {
        comments.push(comment(
            PEOPLE.choose(rng).expect("non-empty"),
            format!("We {fix} in the {component}; verified in staging."),
            created + Duration::hours(rng.random_range(48..240)),
        ));
    }
    let updated = comments.last().map_or(created, |c| c.created_at);
    let ticket = Ticket {
        key,
        title: format!("{} {symptom} {trigger}", capitalize(component)),
        description,
        priority,
        status: if resolved { "Done".into() } else { "Open".into() },
        resolution: resolved.then(|| "Fixed".to_owned()),
        created_at: created,
        updated_at: updated,
        comments,
    };
    (ticket, fix)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn merged_pr(number: u64, title: String, body: String, commit: String, diff: String, at: DateTime<Utc>) -> PullRequest {
    PullRequest {
        repo: REPO.to_owned(),
        number,
        title,
        body,
        commit_messages: vec![commit],
        diff_text: diff,
        review_comments: vec!["Looks good to me.".to_owned()],
        merged_at: Some(at),
        state: PrState::Merged,
        created_at: Some(at - Duration::hours(6)),
        updated_at: Some(at),
    }
}

/// Builds `n_tickets` historical tickets (at least one), roughly half of them
/// with a merged PR, and plants a near-duplicate of the probe at a seeded
/// position. Timestamps fall in the two years before `now`; the duplicate is
/// about a month old.
pub fn planted_duplicate_corpus(n_tickets: usize, seed: u64, now: DateTime<Utc>) -> PlantedCorpus {
    let n = n_tickets.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dup_index = rng.random_range(0..n);
    let mut tickets = Vec::with_capacity(n);
    let mut prs = Vec::new();
    let mut next_pr = 1000u64;
    let mut fix_pr = String::new();

    for i in 0..n {
        let key = format!("{PROJECT}-{}", i + 1);
        if i == dup_index {
            let created = now - Duration::days(30);
            let fixed_at = created + Duration::days(2);
            tickets.push(Ticket {
                key: key.clone(),
                title: DUP_TITLE.to_owned(),
                description: DUP_DESCRIPTION.to_owned(),
                priority: Priority::Critical,
                status: "Done".into(),
                resolution: Some("Fixed".into()),
                created_at: created,
                updated_at: fixed_at,
                comments: vec![
                    comment("dara", "Reproduced on the analytics dashboard in dark mode only.".into(), created + Duration::hours(3)),
                    comment("eli", DUP_FIX_COMMENT.into(), fixed_at),
                ],
            });
            let pr = merged_pr(
                next_pr,
                "Guard ThemeProvider.render against a missing palette".into(),
                format!("Fixes {key}. Adds a null check in ThemeProvider.render() before the dark mode palette lookup."),
                "Add null check in ThemeProvider.render".into(),
                "--- a/src/ui/ThemeProvider.java\n+++ b/src/ui/ThemeProvider.java\n@@ -85,3 +85,6 @@ public void render()\n+        if (palette == null) {\n+            palette = Palette.defaults();\n+        }".into(),
                fixed_at,
            );
            fix_pr = pr.id().to_string();
            prs.push(pr);
            next_pr += 1;
            continue;
        }
        let created = now - Duration::days(rng.random_range(40..730)) - Duration::minutes(rng.random_range(0..1440));
        let (ticket, fix) = filler_ticket(&mut rng, key.clone(), created);
        if ticket.resolution.is_some() && rng.random_bool(0.6) {
            let at = ticket.updated_at;
            let component = ticket.title.split(' ').take(2).collect::<Vec<_>>().join(" ").to_lowercase();
            prs.push(merged_pr(
                next_pr,
                format!("{} in {component}", capitalize(fix)),
                format!("Fixes {key}."),
                format!("{key}: {fix}"),
                format!("--- a/src/{0}.java\n+++ b/src/{0}.java\n@@ -1,2 +1,3 @@\n+        // {fix}", component.replace(' ', "_")),
                at,
            ));
            next_pr += 1;
        }
        tickets.push(ticket);
    }

    let probe = Ticket {
        key: format!("{PROJECT}-{}", n + 1),
        title: PROBE_TITLE.to_owned(),
        description: PROBE_DESCRIPTION.to_owned(),
        priority: Priority::Critical,
        status: "Open".into(),
        resolution: None,
        created_at: now,
        updated_at: now,
        comments: Vec::new(),
    };
    PlantedCorpus { tickets, prs, probe, duplicate_key: format!("{PROJECT}-{}", dup_index + 1), fix_pr }
}

/// Serializes tickets as a JIRA JSONL export.
pub fn jira_jsonl(tickets: &[Ticket]) -> String {
    let mut out = String::new();
    for t in tickets {
        let comments: Vec<_> = t
            .comments
            .iter()
            .map(|c| json!({ "author": c.author, "body": c.body, "created_at": c.created_at }))
            .collect();
        let line = json!({
            "key": t.key,
            "title": t.title,
            "description": t.description,
            "priority": t.priority,
            "status": t.status,
            "resolution": t.resolution,
            "created_at": t.created_at,
            "updated_at": t.updated_at,
            "comments": comments,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Serializes pull requests as a GitHub JSONL export.
pub fn github_jsonl(prs: &[PullRequest]) -> String {
    let mut out = String::new();
    for p in prs {
        let state = match p.state {
            PrState::Open => "open",
            PrState::Merged => "merged",
            PrState::Closed => "closed",
        };
        let line = json!({
            "repo": p.repo,
            "number": p.number,
            "title": p.title,
            "body": p.body,
            "commit_messages": p.commit_messages,
            "diff": p.diff_text,
            "review_comments": p.review_comments,
            "state": state,
            "merged_at": p.merged_at,
            "created_at": p.created_at,
            "updated_at": p.updated_at,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_github_export, parse_jira_export, CleaningConfig, Corpus};

    fn now() -> DateTime<Utc> {
        "2025-06-01T00:00:00Z".parse().unwrap()
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = planted_duplicate_corpus(50, 3, now());
        let b = planted_duplicate_corpus(50, 3, now());
        assert_eq!(a.tickets.len(), 50);
        assert_eq!(a.duplicate_key, b.duplicate_key);
        assert_eq!(jira_jsonl(&a.tickets), jira_jsonl(&b.tickets));
        assert!(a.tickets.iter().all(|t| t.key != a.probe.key));
    }

    #[test]
    fn fix_pr_links_to_duplicate() {
        let p = planted_duplicate_corpus(40, 11, now());
        let corpus = Corpus::from_parts(p.tickets.clone(), p.prs.clone(), &CleaningConfig::default());
        let linked: Vec<String> =
            corpus.links_for(&p.duplicate_key).map(|l| l.pr_id().to_string()).collect();
        assert_eq!(linked, vec![p.fix_pr.clone()]);
    }

    #[test]
    fn jsonl_round_trips_through_parsers() {
        let p = planted_duplicate_corpus(30, 5, now());
        let tickets = parse_jira_export(jira_jsonl(&p.tickets).as_bytes()).unwrap();
        let prs = parse_github_export(github_jsonl(&p.prs).as_bytes()).unwrap();
        assert_eq!(tickets.len(), p.tickets.len());
        assert_eq!(prs.len(), p.prs.len());
        assert_eq!(tickets[0].key, p.tickets[0].key);
        assert_eq!(prs.last().unwrap().id().to_string(), p.prs.last().unwrap().id().to_string());
    }
}
