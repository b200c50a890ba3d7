//! Evidence bundle to resolution suggestion: prompt assembly under a word
//! budget, a remote chat generator, a deterministic extractive generator, and
//! grounding/confidence scoring.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::lexical::tokenize;
use crate::retrieval::{EvidenceBundle, RankedHit};
use crate::corpus::Partition;
use crate::transport::{post_with_retry, RetriesExhausted, RetryPolicy, Transport};

pub const DEFAULT_BUDGET: usize = 3000;
/// Containment ratio at which a step counts as fully supported.
pub const SUPPORT_THRESHOLD: f64 = 0.6;
pub const ESCALATION_STEP: &str = "No similar historical cases found; escalate for manual triage";
const RESOLUTION_STEMS: [&str; 5] = ["fix", "resolve", "replace", "upgrade", "safeguard"];
const EXTRACTIVE_HITS: usize = 3;

/// Prompt template: system instructions, a `---` line, then the user message
/// with `{ticket}` and `{evidence}` placeholders.
pub const PROMPT_TEMPLATE: &str = include_str!("../assets/prompt_template.txt");

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("budget too small: instructions and ticket need {needed} words, budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("empty generation")]
    EmptyGeneration,
    #[error("remote generator unconfigured")]
    Unconfigured,
    #[error("generator response is malformed: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Transport(#[from] RetriesExhausted),
}

/// Number of whitespace-delimited words, the token proxy used for budgets.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Byte offsets at which a sentence ends: just after `.`, `!` or `?` when a
/// space follows, just before a newline, and at the end of the text.
pub fn sentence_ends(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut ends = Vec::new();
    for i in 0..bytes.len() {
        match bytes[i] {
            b'.' | b'!' | b'?' if bytes.get(i + 1) == Some(&b' ') => ends.push(i + 1),
            b'\n' => ends.push(i),
            _ => {}
        }
    }
    if ends.last() != Some(&text.len()) {
        ends.push(text.len());
    }
    ends.dedup();
    ends
}

/// Non-empty sentences of `text`, trimmed.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut start = 0;
    let mut out = Vec::new();
    for end in sentence_ends(text) {
        let s = text[start..end].trim();
        if !s.is_empty() {
            out.push(s);
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBlock {
    pub chunk_id: String,
    pub source_key: String,
    pub text: String,
    pub link: Option<String>,
}

impl EvidenceBlock {
    fn header(&self, n: usize) -> String {
        match &self.link {
            Some(pr) => format!("[{n}] {} ({}) linked PR {pr}", self.source_key, self.chunk_id),
            None => format!("[{n}] {} ({})", self.source_key, self.chunk_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub system_instructions: String,
    pub ticket_block: String,
    pub evidence_blocks: Vec<EvidenceBlock>,
    pub token_count: usize,
    pub truncated: bool,
}

fn template_parts() -> (&'static str, &'static str) {
    let (system, user) = PROMPT_TEMPLATE.split_once("\n---\n").expect("template has a --- separator");
    (system.trim(), user)
}

impl PromptPayload {
    fn render_evidence(&self) -> String {
        self.evidence_blocks
            .iter()
            .enumerate()
            .map(|(i, b)| format!("{}\n{}", b.header(i + 1), b.text))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// The user message with placeholders filled in.
    pub fn user_message(&self) -> String {
        let (_, user) = template_parts();
        user.replace("{ticket}", &self.ticket_block).replace("{evidence}", &self.render_evidence())
    }

    /// System instructions and user message, as sent to a completion model.
    pub fn render(&self) -> String {
        format!("{}\n{}", self.system_instructions, self.user_message())
    }
}

/// The PR shown next to a hit: the hit itself for PR chunks, else the first
/// linked PR of its ticket.
fn pr_for(hit: &RankedHit, bundle: &EvidenceBundle) -> Option<String> {
    match hit.partition {
        Partition::Pr => Some(hit.source_key.clone()),
        Partition::Ticket | Partition::Comment => {
            bundle.linked_prs.iter().find(|l| l.ticket_key == hit.source_key).map(|l| l.pr.clone())
        }
    }
}

/// Assembles the prompt. Instructions and the ticket always go in; evidence
/// blocks are admitted in rank order while they fit. A block that does not
/// fit is cut at its last sentence boundary that does, or skipped if not even
/// its first sentence fits.
pub fn build_prompt(bundle: &EvidenceBundle, ticket_text: &str, budget: usize) -> Result<PromptPayload, GenerationError> {
    let (system, _) = template_parts();
    let mut payload = PromptPayload {
        system_instructions: system.to_owned(),
        ticket_block: ticket_text.trim().to_owned(),
        evidence_blocks: Vec::new(),
        token_count: 0,
        truncated: false,
    };
    let fixed = word_count(&payload.render());
    if fixed > budget {
        return Err(GenerationError::BudgetTooSmall { needed: fixed, budget });
    }
    let mut used = fixed;
    for hit in &bundle.hits {
        let mut block = EvidenceBlock {
            chunk_id: hit.chunk_id.clone(),
            source_key: hit.source_key.clone(),
            text: hit.text.trim().to_owned(),
            link: pr_for(hit, bundle),
        };
        let header = word_count(&block.header(payload.evidence_blocks.len() + 1));
        let room = budget - used;
        let whole = header + word_count(&block.text);
        if whole <= room {
            used += whole;
            payload.evidence_blocks.push(block);
            continue;
        }
        payload.truncated = true;
        if header >= room {
            continue;
        }
        let cut = sentence_ends(&block.text)
            .into_iter()
            .take_while(|&e| header + word_count(&block.text[..e]) <= room)
            .filter(|&e| word_count(&block.text[..e]) > 0)
            .last();
        if let Some(e) = cut {
            block.text = block.text[..e].trim_end().to_owned();
            used += header + word_count(&block.text);
            payload.evidence_blocks.push(block);
        }
    }
    payload.token_count = word_count(&payload.render());
    debug_assert!(payload.token_count <= budget);
    Ok(payload)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Remote,
    Extractive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceLink {
    pub chunk_id: String,
    pub source_key: String,
    pub pr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSuggestion {
    pub suggestion_id: String,
    pub steps: Vec<String>,
    pub evidence_links: Vec<EvidenceLink>,
    pub rationale: String,
    pub grounding: f64,
    pub confidence: f64,
    pub generator: GeneratorKind,
    pub created_at: DateTime<Utc>,
}

static NEXT_ID: LazyLock<AtomicU64> =
    LazyLock::new(|| AtomicU64::new(Utc::now().timestamp_micros().max(0) as u64));

/// Process-wide unique, increasing suggestion id.
pub fn next_suggestion_id() -> String {
    format!("sg-{:016x}", NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

/// Tokens a suggestion may draw on: hit texts, source keys and linked PR ids.
pub fn evidence_pool(bundle: &EvidenceBundle) -> HashSet<String> {
    let mut pool: HashSet<String> = HashSet::new();
    for h in &bundle.hits {
        pool.extend(tokenize(&h.text));
        pool.extend(tokenize(&h.source_key));
    }
    for l in &bundle.linked_prs {
        pool.extend(tokenize(&l.pr));
    }
    pool
}

/// Support of one step: the share of its distinct tokens found in `pool`,
/// scaled so that a share of 0.6 or more counts as 1.
pub fn step_support(step: &str, pool: &HashSet<String>) -> f64 {
    let tokens: HashSet<String> = tokenize(step).into_iter().collect();
    if tokens.is_empty() || pool.is_empty() {
        return 0.0;
    }
    let ratio = tokens.iter().filter(|t| pool.contains(*t)).count() as f64 / tokens.len() as f64;
    if ratio >= SUPPORT_THRESHOLD {
        1.0
    } else {
        ratio / SUPPORT_THRESHOLD
    }
}

/// Mean step support against the bundle's evidence pool.
pub fn grounding_score(steps: &[String], bundle: &EvidenceBundle) -> f64 {
    let pool = evidence_pool(bundle);
    if steps.is_empty() || pool.is_empty() {
        return 0.0;
    }
    steps.iter().map(|s| step_support(s, &pool)).sum::<f64>() / steps.len() as f64
}

/// Half retrieval strength (mean clamped final score of the top three hits),
/// half grounding.
pub fn confidence_score(bundle: &EvidenceBundle, grounding: f64) -> f64 {
    if bundle.hits.is_empty() {
        return 0.0;
    }
    let top: Vec<f64> = bundle.hits.iter().take(3).map(|h| h.final_score.clamp(0.0, 1.0)).collect();
    let retrieval = top.iter().sum::<f64>() / top.len() as f64;
    (0.5 * retrieval + 0.5 * grounding.clamp(0.0, 1.0)).clamp(0.0, 1.0)
}

fn is_resolution_sentence(s: &str) -> bool {
    tokenize(s).iter().any(|t| RESOLUTION_STEMS.iter().any(|stem| t.starts_with(stem)))
}

/// Deterministic generator: one step per top hit quoting its first
/// resolution-bearing sentence (or its first sentence), then a step naming
/// the linked PRs.
pub fn generate_extractive(bundle: &EvidenceBundle) -> ResolutionSuggestion {
    let created_at = bundle.retrieved_at;
    if bundle.hits.is_empty() {
        return ResolutionSuggestion {
            suggestion_id: next_suggestion_id(),
            steps: vec![ESCALATION_STEP.to_owned()],
            evidence_links: Vec::new(),
            rationale: "No retrieved evidence.".to_owned(),
            grounding: 0.0,
            confidence: 0.0,
            generator: GeneratorKind::Extractive,
            created_at,
        };
    }
    let used: Vec<&RankedHit> = bundle.hits.iter().take(EXTRACTIVE_HITS).collect();
    let mut steps = Vec::new();
    for h in &used {
        let all = sentences(&h.text);
        let pick = all.iter().find(|s| is_resolution_sentence(s)).or(all.first());
        if let Some(s) = pick {
            steps.push(format!("{}: {s}", h.source_key));
        }
    }
    if !bundle.linked_prs.is_empty() {
        let mut prs: Vec<&str> = bundle.linked_prs.iter().map(|l| l.pr.as_str()).collect();
        prs.dedup();
        steps.push(format!("Apply the change from {}", prs.join(", ")));
    }
    if steps.is_empty() {
        steps.push(ESCALATION_STEP.to_owned());
    }
    let mut keys: Vec<&str> = Vec::new();
    for h in &used {
        if !keys.contains(&h.source_key.as_str()) {
            keys.push(&h.source_key);
        }
    }
    let grounding = grounding_score(&steps, bundle);
    ResolutionSuggestion {
        suggestion_id: next_suggestion_id(),
        evidence_links: used
            .iter()
            .map(|h| EvidenceLink { chunk_id: h.chunk_id.clone(), source_key: h.source_key.clone(), pr: pr_for(h, bundle) })
            .collect(),
        rationale: format!("Drawn from similar historical cases: {}.", keys.join(", ")),
        confidence: confidence_score(bundle, grounding),
        grounding,
        steps,
        generator: GeneratorKind::Extractive,
        created_at,
    }
}

/// Splits model output into steps and a rationale.
///
/// Numbered (`1.`, `2)`) and bulleted (`-`, `*`, `•`) lines start steps;
/// other lines continue the current step. Everything after a line starting
/// with `Rationale:` is the rationale. Output without any marker becomes one
/// step.
pub fn parse_suggestion(raw: &str) -> (Vec<String>, String) {
    let mut body = raw;
    let mut rationale = String::new();
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if trimmed.len() >= 10 && trimmed[..10].eq_ignore_ascii_case("rationale:") {
            body = &raw[..offset];
            let start = offset + (line.len() - trimmed.len()) + 10;
            rationale = raw[start..].split_whitespace().collect::<Vec<_>>().join(" ");
            break;
        }
        offset += line.len();
    }

    let mut steps: Vec<String> = Vec::new();
    let mut structured = false;
    for line in body.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(item) = list_item(t) {
            structured = true;
            steps.push(item.to_owned());
        } else if structured {
            let last = steps.last_mut().expect("structured implies a step");
            last.push(' ');
            last.push_str(t);
        }
    }
    if !structured {
        let all = body.split_whitespace().collect::<Vec<_>>().join(" ");
        steps = if all.is_empty() { Vec::new() } else { vec![all] };
    }
    (steps, rationale)
}

fn list_item(line: &str) -> Option<&str> {
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest.trim());
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") "))?;
    Some(rest.trim())
}

/// Chat-style completion endpoint: POST `{"messages": [{role, content}]}`,
/// reply `{"content": "..."}`.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    pub endpoint: String,
    pub transport: Transport,
    pub retry: RetryPolicy,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

impl RemoteGenerator {
    pub fn new(endpoint: impl Into<String>, transport: Transport, retry: RetryPolicy) -> Self {
        RemoteGenerator { endpoint: endpoint.into(), transport, retry }
    }

    /// The model's text, verbatim.
    pub fn complete(&self, payload: &PromptPayload) -> Result<String, GenerationError> {
        let body = json!({
            "messages": [
                { "role": "system", "content": payload.system_instructions },
                { "role": "user", "content": payload.user_message() },
            ]
        });
        let value = post_with_retry(self.transport.0.as_ref(), &self.retry, &self.endpoint, &body)?;
        let reply: ChatReply =
            serde_json::from_value(value).map_err(|e| GenerationError::BadResponse(e.to_string()))?;
        if reply.content.trim().is_empty() {
            return Err(GenerationError::EmptyGeneration);
        }
        Ok(reply.content)
    }
}

/// Suggestion from the remote model. Evidence links cover the blocks that
/// made it into the prompt.
pub fn generate_remote(
    bundle: &EvidenceBundle,
    payload: &PromptPayload,
    generator: &RemoteGenerator,
) -> Result<ResolutionSuggestion, GenerationError> {
    let raw = generator.complete(payload)?;
    let (steps, rationale) = parse_suggestion(&raw);
    if steps.is_empty() {
        return Err(GenerationError::EmptyGeneration);
    }
    let grounding = grounding_score(&steps, bundle);
    Ok(ResolutionSuggestion {
        suggestion_id: next_suggestion_id(),
        evidence_links: payload
            .evidence_blocks
            .iter()
            .map(|b| EvidenceLink { chunk_id: b.chunk_id.clone(), source_key: b.source_key.clone(), pr: b.link.clone() })
            .collect(),
        rationale,
        confidence: confidence_score(bundle, grounding),
        grounding,
        steps,
        generator: GeneratorKind::Remote,
        created_at: bundle.retrieved_at,
    })
}

/// Which generator to run.
#[derive(Debug, Clone, Copy)]
pub enum Generator<'a> {
    Extractive,
    Remote { generator: &'a RemoteGenerator, budget: usize, fallback: bool },
}

/// Runs the chosen generator. With `fallback`, any remote failure yields the
/// extractive suggestion instead.
pub fn generate(bundle: &EvidenceBundle, ticket_text: &str, with: Generator<'_>) -> Result<ResolutionSuggestion, GenerationError> {
    match with {
        Generator::Extractive => Ok(generate_extractive(bundle)),
        Generator::Remote { generator, budget, fallback } => {
            let result = build_prompt(bundle, ticket_text, budget).and_then(|p| generate_remote(bundle, &p, generator));
            match result {
                Err(_) if fallback => Ok(generate_extractive(bundle)),
                other => other,
            }
        }
    }
}
