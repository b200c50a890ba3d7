use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Function-level view of a unified diff.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub changed_functions: Vec<String>,
    pub files_touched: Vec<String>,
    pub hunk_count: usize,
}

static DECLARATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        ^(?:export\s+)?(?:pub(?:\([^)]*\))?\s+)?(?:async\s+)?(?:static\s+)?
         (?:fn|def|func|function)\s+[A-Za-z_$][\w$]*
        |
        ^(?:public|private|protected|internal)\s+(?:static\s+)?(?:[\w<>\[\],]+\s+)+[A-Za-z_]\w*\s*\(
        ",
    )
    .expect("declaration regex")
});

/// Summarizes a unified diff with a language-agnostic heuristic: hunk-header
/// context plus added/removed lines that look like function declarations.
pub fn summarize_diff(diff_text: &str) -> DiffSummary {
    let mut s = DiffSummary::default();
    let mut last_old_path: Option<String> = None;
    for line in diff_text.lines() {
        if let Some(rest) = line.strip_prefix("--- ") {
            last_old_path = Some(header_path(rest, "a/"));
        } else if let Some(rest) = line.strip_prefix("+++ ") {
            let path = header_path(rest, "b/");
            if path == "/dev/null" {
                if let Some(old) = last_old_path.take().filter(|p| p != "/dev/null") {
                    s.files_touched.push(old);
                }
            } else {
                s.files_touched.push(path);
            }
        } else if let Some(rest) = line.strip_prefix("@@") {
            s.hunk_count += 1;
            if let Some(end) = rest.find("@@") {
                let context = rest[end + 2..].trim();
                if !context.is_empty() {
                    s.changed_functions.push(context.to_owned());
                }
            }
        } else if let Some(body) = line.strip_prefix('+').or_else(|| line.strip_prefix('-')) {
            let body = body.trim();
            if DECLARATION.is_match(body) {
                let decl = body.trim_end_matches(|c: char| c == '{' || c == ':' || c.is_whitespace());
                s.changed_functions.push(decl.to_owned());
            }
        }
    }
    s.changed_functions.sort();
    s.changed_functions.dedup();
    s.files_touched.sort();
    s.files_touched.dedup();
    s
}

fn header_path(rest: &str, prefix: &str) -> String {
    let path = rest.split('\t').next().unwrap_or("").trim();
    path.strip_prefix(prefix).unwrap_or(path).to_owned()
}
