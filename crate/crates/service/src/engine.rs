//! Request handling independent of the HTTP layer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use ticketrag::corpus::{extract_issue_keys, Partition};
use ticketrag::embedding::{embedder_from_spec, EmbedError, Embedder, EmbedderSpec};
use ticketrag::exec::Execution;
use ticketrag::generation::{generate, GenerationError, Generator, GeneratorKind, RemoteGenerator, ResolutionSuggestion, ESCALATION_STEP};
use ticketrag::retrieval::{retrieve, EvidenceBundle, FeedbackStats, KnowledgeBase, QuerySpec, RetrievalError};
use ticketrag::transport::Transport;

use crate::config::ServiceConfig;
use crate::feedback::{feedback_stats, FeedbackEvent, SuggestionRecord, Verdict};
use crate::journal::{Journal, JournalEntry};
use crate::snapshot::{Loaded, Snapshot, SnapshotDir, SnapshotError, JOURNAL_FILE};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{field}: {message}")]
    BadRequest { field: String, message: String },
    #[error("unknown suggestion {0}")]
    NotFound(String),
    #[error("remote generator unconfigured")]
    RemoteUnconfigured,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Retrieval(RetrievalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("journal write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl EngineError {
    pub fn bad(field: &str, message: impl Into<String>) -> Self {
        EngineError::BadRequest { field: field.to_owned(), message: message.into() }
    }
}

impl From<RetrievalError> for EngineError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::EmptyQuery => EngineError::bad("text", "query text is empty after cleaning"),
            RetrievalError::InvalidQuery(m) => EngineError::bad("k", m),
            other => EngineError::Retrieval(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
    /// Reference time for temporal decay; the current time when absent.
    #[serde(default)]
    pub now: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub text: String,
    #[serde(default)]
    pub generator: Option<GeneratorKind>,
    #[serde(default)]
    pub now: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub suggestion_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub edited_steps: Option<Vec<String>>,
    pub actor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JiraIssue {
    pub key: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JiraWebhook {
    pub issue: JiraIssue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GithubWebhook {
    pub repo: String,
    pub number: u64,
    pub title: String,
    #[serde(default)]
    pub body: String,
}

/// The comment a bot would post, plus the suggestions behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookReply {
    pub comment: String,
    pub suggestion_ids: Vec<String>,
    pub issue_keys: Vec<String>,
}

/// State-changing routes whose requests are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Query,
    Suggest,
    Feedback,
    WebhookJira,
    WebhookGithub,
}

impl Route {
    const ALL: [Route; 5] = [Route::Query, Route::Suggest, Route::Feedback, Route::WebhookJira, Route::WebhookGithub];

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Query => "query",
            Route::Suggest => "suggest",
            Route::Feedback => "feedback",
            Route::WebhookJira => "webhook_jira",
            Route::WebhookGithub => "webhook_github",
        }
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    requests: [AtomicU64; 5],
    errors: AtomicU64,
    queries_served: AtomicU64,
    suggestions_created: AtomicU64,
    feedback_events: AtomicU64,
    accepts: AtomicU64,
    rejects: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub requests: BTreeMap<String, u64>,
    pub errors: u64,
    pub queries_served: u64,
    pub suggestions_created: u64,
    pub feedback_events: u64,
    pub accepts: u64,
    pub rejects: u64,
    /// `accepts / (accepts + rejects)`, 0 before any feedback.
    pub acceptance_rate: f64,
}

impl Metrics {
    pub fn request(&self, route: Route) {
        self.requests[route as usize].fetch_add(1, Ordering::Relaxed);
    }

    pub fn error(&self) {
        self.errors.fetch_add(1, Ordering::Relaxed);
    }

    pub fn view(&self) -> MetricsView {
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        let (accepts, rejects) = (get(&self.accepts), get(&self.rejects));
        MetricsView {
            requests: Route::ALL.iter().map(|r| (r.as_str().to_owned(), get(&self.requests[*r as usize]))).collect(),
            errors: get(&self.errors),
            queries_served: get(&self.queries_served),
            suggestions_created: get(&self.suggestions_created),
            feedback_events: get(&self.feedback_events),
            accepts,
            rejects,
            acceptance_rate: if accepts + rejects == 0 { 0.0 } else { accepts as f64 / (accepts + rejects) as f64 },
        }
    }
}

/// One immutable snapshot generation with its query embedder.
pub struct Generation {
    pub name: String,
    pub snapshot: Snapshot,
    pub kb: KnowledgeBase,
    pub embedder: Box<dyn Embedder>,
}

#[derive(Default)]
struct Records {
    list: Vec<SuggestionRecord>,
    by_id: HashMap<String, usize>,
}

impl Records {
    fn push(&mut self, r: SuggestionRecord) {
        self.by_id.insert(r.id().to_owned(), self.list.len());
        self.list.push(r);
    }
}

pub struct Engine {
    config: ServiceConfig,
    dir: SnapshotDir,
    current: RwLock<Arc<Generation>>,
    records: RwLock<Records>,
    stats: RwLock<Arc<FeedbackStats>>,
    journal: Mutex<Journal>,
    metrics: Metrics,
    remote: Option<RemoteGenerator>,
    exec: Execution,
}

fn make_embedder(spec: &EmbedderSpec, config: &ServiceConfig) -> Result<Box<dyn Embedder>, EmbedError> {
    embedder_from_spec(spec, Some(Transport::http(config.http_timeout)), config.retry_policy())
}

/// Drops hits from the given sources and the PR links that no remaining
/// ticket hit supports.
fn exclude_sources(bundle: &mut EvidenceBundle, sources: &HashSet<String>) {
    bundle.hits.retain(|h| !sources.contains(&h.source_key));
    let tickets: HashSet<&str> =
        bundle.hits.iter().filter(|h| h.partition == Partition::Ticket).map(|h| h.source_key.as_str()).collect();
    bundle.linked_prs.retain(|l| tickets.contains(l.ticket_key.as_str()) && !sources.contains(&l.pr));
}

/// Markdown comment body for one suggestion. Always carries either an
/// evidence link or the escalation message.
pub fn render_comment(heading: &str, s: &ResolutionSuggestion) -> String {
    let mut out = format!(
        "### {heading}\nConfidence {:.2} (grounding {:.2}, {} generator)\n\n",
        s.confidence,
        s.grounding,
        match s.generator {
            GeneratorKind::Remote => "remote",
            GeneratorKind::Extractive => "extractive",
        }
    );
    for (i, step) in s.steps.iter().enumerate() {
        out.push_str(&format!("{}. {step}\n", i + 1));
    }
    if s.evidence_links.is_empty() {
        if !s.steps.iter().any(|st| st == ESCALATION_STEP) {
            out.push_str(&format!("\n{ESCALATION_STEP}\n"));
        }
    } else {
        out.push_str("\nEvidence:\n");
        for l in &s.evidence_links {
            out.push_str(&format!("- {} ({})", l.source_key, l.chunk_id));
            if let Some(pr) = &l.pr {
                out.push_str(&format!(", linked PR {pr}"));
            }
            out.push('\n');
        }
    }
    out
}

impl Engine {
    /// Loads the current generation under `dir`.
    pub fn open(config: ServiceConfig, dir: SnapshotDir) -> Result<Engine, EngineError> {
        let loaded = dir.load()?;
        Self::from_loaded(config, dir, loaded)
    }

    pub fn from_loaded(config: ServiceConfig, dir: SnapshotDir, loaded: Loaded) -> Result<Engine, EngineError> {
        let Loaded { mut snapshot, generation, journal, .. } = loaded;
        let mut records = Records::default();
        for r in std::mem::take(&mut snapshot.suggestions) {
            records.push(r);
        }
        let stats = feedback_stats(&records.list);
        let embedder = make_embedder(&snapshot.manifest.embedder, &config)?;
        let kb = snapshot.knowledge_base();
        let remote = config
            .generator_endpoint
            .as_ref()
            .map(|e| RemoteGenerator::new(e.clone(), Transport::http(config.http_timeout), config.retry_policy()));
        Ok(Engine {
            config,
            dir,
            current: RwLock::new(Arc::new(Generation { name: generation, snapshot, kb, embedder })),
            records: RwLock::new(records),
            stats: RwLock::new(Arc::new(stats)),
            journal: Mutex::new(journal),
            metrics: Metrics::default(),
            remote,
            exec: Execution::default(),
        })
    }

    /// Replaces the remote generator (tests inject a stub transport here).
    pub fn with_remote(mut self, remote: Option<RemoteGenerator>) -> Self {
        self.remote = remote;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn generation(&self) -> Arc<Generation> {
        self.current.read().expect("generation lock").clone()
    }

    pub fn feedback_snapshot(&self) -> Arc<FeedbackStats> {
        self.stats.read().expect("stats lock").clone()
    }

    /// Query spec with the configured retrieval settings. `k` sets the final
    /// hit count and raises the per-partition budget when needed.
    pub fn query_spec(&self, text: &str, k: Option<usize>, now: Option<DateTime<Utc>>) -> QuerySpec {
        let mut q = QuerySpec::new(text, now.unwrap_or_else(Utc::now));
        q.k_per_partition = self.config.k_per_partition;
        q.k_final = self.config.k_final;
        if let Some(k) = k {
            q.k_final = k;
            q.k_per_partition = q.k_per_partition.max(k.div_ceil(Partition::ALL.len()));
        }
        q.hybrid = self.config.hybrid;
        q.temporal = self.config.temporal;
        q.weights = self.config.weights;
        q
    }

    fn run(&self, gen: &Generation, spec: &QuerySpec) -> Result<EvidenceBundle, EngineError> {
        if gen.kb.chunk_count() == 0 {
            return Err(EngineError::EmptyCorpus);
        }
        let stats = self.feedback_snapshot();
        let bundle = retrieve(spec, &gen.kb, gen.embedder.as_ref(), &stats)?;
        self.metrics.queries_served.fetch_add(1, Ordering::Relaxed);
        Ok(bundle)
    }

    pub fn query(&self, req: &QueryRequest) -> Result<EvidenceBundle, EngineError> {
        if req.k == Some(0) {
            return Err(EngineError::bad("k", "must be positive"));
        }
        let gen = self.generation();
        self.run(&gen, &self.query_spec(&req.text, req.k, req.now))
    }

    fn generator_kind(&self, requested: Option<GeneratorKind>) -> Result<GeneratorKind, EngineError> {
        match requested {
            Some(GeneratorKind::Remote) if self.remote.is_none() => Err(EngineError::RemoteUnconfigured),
            Some(k) => Ok(k),
            None if self.remote.is_some() => Ok(GeneratorKind::Remote),
            None => Ok(GeneratorKind::Extractive),
        }
    }

    fn generate(&self, bundle: &EvidenceBundle, ticket_text: &str, kind: GeneratorKind) -> Result<ResolutionSuggestion, EngineError> {
        let with = match (kind, &self.remote) {
            (GeneratorKind::Remote, Some(generator)) => Generator::Remote {
                generator,
                budget: self.config.prompt_budget,
                fallback: self.config.generator_fallback,
            },
            (GeneratorKind::Remote, None) => return Err(EngineError::RemoteUnconfigured),
            (GeneratorKind::Extractive, _) => Generator::Extractive,
        };
        Ok(generate(bundle, ticket_text, with)?)
    }

    fn store(&self, record: SuggestionRecord) -> Result<(), EngineError> {
        let mut journal = self.journal.lock().expect("journal lock");
        journal.append(&JournalEntry::Suggestion(record.clone()))?;
        self.records.write().expect("records lock").push(record);
        self.metrics.suggestions_created.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Retrieves, generates and persists a suggestion.
    pub fn suggest(&self, req: &SuggestRequest) -> Result<ResolutionSuggestion, EngineError> {
        let kind = self.generator_kind(req.generator)?;
        let gen = self.generation();
        let bundle = self.run(&gen, &self.query_spec(&req.text, None, req.now))?;
        let suggestion = self.generate(&bundle, &req.text, kind)?;
        self.store(SuggestionRecord::new(suggestion.clone(), &bundle))?;
        Ok(suggestion)
    }

    pub fn suggestion(&self, id: &str) -> Option<SuggestionRecord> {
        let records = self.records.read().expect("records lock");
        records.by_id.get(id).map(|&i| records.list[i].clone())
    }

    pub fn suggestion_count(&self) -> usize {
        self.records.read().expect("records lock").list.len()
    }

    /// Validates, journals and applies one feedback event.
    pub fn feedback(&self, req: FeedbackRequest, at: DateTime<Utc>) -> Result<(), EngineError> {
        let event = FeedbackEvent {
            suggestion_id: req.suggestion_id,
            verdict: req.verdict,
            edited_steps: req.edited_steps,
            actor: req.actor,
            created_at: at,
        };
        event.validate().map_err(|(field, m)| EngineError::bad(field, m))?;
        let mut journal = self.journal.lock().expect("journal lock");
        {
            let records = self.records.read().expect("records lock");
            if !records.by_id.contains_key(&event.suggestion_id) {
                return Err(EngineError::NotFound(event.suggestion_id));
            }
        }
        journal.append(&JournalEntry::Feedback(event.clone()))?;
        let positive = event.verdict.is_positive();
        let stats = {
            let mut records = self.records.write().expect("records lock");
            let i = records.by_id[&event.suggestion_id];
            records.list[i].feedback.push(event);
            feedback_stats(&records.list)
        };
        *self.stats.write().expect("stats lock") = Arc::new(stats);
        self.metrics.feedback_events.fetch_add(1, Ordering::Relaxed);
        if positive {
            self.metrics.accepts.fetch_add(1, Ordering::Relaxed);
        } else {
            self.metrics.rejects.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    }

    fn suggest_excluding(
        &self,
        gen: &Generation,
        spec: QuerySpec,
        ticket_text: &str,
        exclude: &HashSet<String>,
    ) -> Result<ResolutionSuggestion, EngineError> {
        let kind = self.generator_kind(None)?;
        let mut bundle = self.run(gen, &spec)?;
        exclude_sources(&mut bundle, exclude);
        let suggestion = self.generate(&bundle, ticket_text, kind)?;
        self.store(SuggestionRecord::new(suggestion.clone(), &bundle))?;
        Ok(suggestion)
    }

    /// New or updated JIRA issue: suggestions drawn from other tickets and PRs.
    pub fn jira_webhook(&self, hook: &JiraWebhook, now: Option<DateTime<Utc>>) -> Result<WebhookReply, EngineError> {
        let issue = &hook.issue;
        if issue.key.trim().is_empty() {
            return Err(EngineError::bad("issue.key", "must not be empty"));
        }
        let gen = self.generation();
        let text = format!("{}\n{}", issue.title, issue.description);
        let spec = self.query_spec(&text, None, now);
        let s = self.suggest_excluding(&gen, spec, &text, &HashSet::from([issue.key.clone()]))?;
        Ok(WebhookReply {
            comment: render_comment(&format!("Suggested resolution for {}", issue.key), &s),
            suggestion_ids: vec![s.suggestion_id],
            issue_keys: vec![issue.key.clone()],
        })
    }

    /// Pull request event: for every known ticket the PR names, the ticket's
    /// recorded fixes and a suggestion grounded in its history. A PR naming no
    /// known ticket gets a suggestion for its own text.
    pub fn github_webhook(&self, hook: &GithubWebhook, now: Option<DateTime<Utc>>) -> Result<WebhookReply, EngineError> {
        if hook.repo.trim().is_empty() {
            return Err(EngineError::bad("repo", "must not be empty"));
        }
        let gen = self.generation();
        let pr_id = format!("{}#{}", hook.repo, hook.number);
        let keys: Vec<String> = extract_issue_keys(&format!("{}\n{}", hook.title, hook.body))
            .into_iter()
            .filter(|k| gen.snapshot.corpus.ticket(k).is_some())
            .collect();
        let exclude = HashSet::from([pr_id.clone()]);
        let mut sections = Vec::new();
        let mut ids = Vec::new();
        for key in &keys {
            let ticket = gen.snapshot.corpus.ticket(key).expect("filtered to known tickets");
            let text = format!("{}\n{}", ticket.title, ticket.description);
            let spec = self.query_spec(&text, None, now);
            let s = self.suggest_excluding(&gen, spec, &text, &exclude)?;
            let mut section = render_comment(&format!("Historical resolutions for {key}"), &s);
            let prior: Vec<String> =
                gen.snapshot.corpus.links_for(key).map(|e| e.pr_id().to_string()).filter(|p| *p != pr_id).collect();
            if !prior.is_empty() {
                section.push_str(&format!("\nEarlier PRs linked to {key}: {}\n", prior.join(", ")));
            }
            sections.push(section);
            ids.push(s.suggestion_id);
        }
        if keys.is_empty() {
            let text = format!("{}\n{}", hook.title, hook.body);
            let s = self.suggest_excluding(&gen, self.query_spec(&text, None, now), &text, &exclude)?;
            sections.push(render_comment(&format!("Related history for {pr_id}"), &s));
            ids.push(s.suggestion_id);
        }
        Ok(WebhookReply { comment: sections.join("\n"), suggestion_ids: ids, issue_keys: keys })
    }

    /// Re-embeds with the configured embedder, rebuilds indices, writes a new
    /// generation carrying every stored suggestion, and swaps it in. Queries
    /// already running finish on the old generation.
    pub fn refresh(&self, now: DateTime<Utc>) -> Result<String, EngineError> {
        let mut journal = self.journal.lock().expect("journal lock");
        let old = self.generation();
        let embedder = make_embedder(&self.config.embedder, &self.config)?;
        let mut snapshot = old.snapshot.clone();
        snapshot.refresh(embedder.as_ref(), now, self.exec)?;
        snapshot.suggestions = self.records.read().expect("records lock").list.clone();
        let name = self.dir.save(&snapshot)?;
        let (fresh_journal, _) = Journal::open(&self.dir.generation_dir(&name).join(JOURNAL_FILE))
            .map_err(SnapshotError::from)?;
        snapshot.suggestions.clear();
        let kb = snapshot.knowledge_base();
        *self.current.write().expect("generation lock") =
            Arc::new(Generation { name: name.clone(), snapshot, kb, embedder });
        *journal = fresh_journal;
        Ok(name)
    }
}
