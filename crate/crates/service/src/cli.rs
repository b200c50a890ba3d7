//! `ticketrag` command line. Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use ticketrag::corpus::{CleaningConfig, Corpus};
use ticketrag::embedding::embedder_from_spec;
use ticketrag::evaluation::{bench_indexes, bench_report, evaluate, render_bench_table, MixtureSpec, RelevanceJudgments};
use ticketrag::exec::Execution;
use ticketrag::generation::GeneratorKind;
use ticketrag::index::{IndexConfig, IndexKind};
use ticketrag::transport::Transport;

use crate::config::ServiceConfig;
use crate::engine::{Engine, EngineError, QueryRequest, SuggestRequest};
use crate::snapshot::{Snapshot, SnapshotDir};

#[derive(Debug, Parser)]
#[command(name = "ticketrag", version, about = "Retrieval-augmented resolution suggestions for support tickets")]
pub struct Cli {
    /// `key = value` config file; TICKETRAG_* environment variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse JIRA and GitHub JSONL exports, embed, index, and write a snapshot.
    Ingest {
        #[arg(long)]
        jira: PathBuf,
        #[arg(long)]
        github: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Rebuild the dense indices of a snapshot with new parameters.
    BuildIndex {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        kind: Option<IndexKind>,
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long)]
        nprobe: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        ef_construction: Option<usize>,
        #[arg(long)]
        ef_search: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One-shot retrieval; prints the evidence bundle as JSON.
    Query {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        k: Option<usize>,
        /// Reference time (RFC 3339) for temporal decay.
        #[arg(long)]
        now: Option<DateTime<Utc>>,
    },
    /// One-shot suggestion; prints it as JSON and stores it in the snapshot journal.
    Suggest {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        text: String,
        /// `extractive` or `remote`.
        #[arg(long)]
        generator: Option<String>,
        #[arg(long)]
        now: Option<DateTime<Utc>>,
    },
    /// Score a judgments file (JSON or JSONL) and print the report as JSON.
    Eval {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
        #[arg(long)]
        now: Option<DateTime<Utc>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare index kinds on a seeded Gaussian-mixture corpus.
    Bench {
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        clusters: usize,
        #[arg(long, default_value_t = 16)]
        latent_dim: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, value_delimiter = ',', default_value = "ivf,hnsw")]
        kinds: Vec<IndexKind>,
        /// Also write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        snapshot: PathBuf,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Re-embed with the configured embedder and rebuild every index.
    Refresh {
        #[arg(long)]
        snapshot: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::BadRequest { .. } | EngineError::RemoteUnconfigured => CliError::Usage(e.to_string()),
            other => data(other),
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v).map_err(data)?);
    Ok(())
}

fn open_engine(config: ServiceConfig, snapshot: &Path) -> Result<Engine, CliError> {
    Ok(Engine::open(config, SnapshotDir::new(snapshot))?)
}

fn read_judgments(path: &Path) -> Result<RelevanceJudgments, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    if let Ok(j) = serde_json::from_str::<RelevanceJudgments>(&text) {
        return Ok(j);
    }
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        queries.push(serde_json::from_str(line).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(RelevanceJudgments { queries })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config = ServiceConfig::load(cli.config.as_deref()).map_err(|e| CliError::Usage(e.to_string()))?;
    let exec = Execution::default();
    match cli.command {
        Command::Ingest { jira, github, snapshot } => {
            let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| data(format!("{}: {e}", p.display())));
            let corpus =
                Corpus::from_exports(open(&jira)?, open(&github)?, &CleaningConfig::default()).map_err(data)?;
            let embedder = embedder_from_spec(&config.embedder, Some(Transport::http(config.http_timeout)), config.retry_policy())
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let counts = corpus.counts();
            let snap = Snapshot::build(corpus, embedder.as_ref(), config.index, config.bm25, Utc::now(), exec).map_err(data)?;
            let name = SnapshotDir::new(&snapshot).save(&snap).map_err(data)?;
            println!("tickets         {}", counts.tickets);
            println!("comments        {}", counts.comments);
            println!("pull requests   {}", counts.prs);
            println!("links           {}", counts.links);
            println!("dangling keys   {}", counts.dangling_keys);
            println!("ticket chunks   {}", counts.ticket_chunks);
            println!("comment chunks  {}", counts.comment_chunks);
            println!("pr chunks       {}", counts.pr_chunks);
            println!("wrote {} in {}", name, snapshot.display());
        }
        Command::BuildIndex { snapshot, kind, nlist, nprobe, m, ef_construction, ef_search, seed } => {
            let dir = SnapshotDir::new(&snapshot);
            let mut snap = dir.load().map_err(data)?.snapshot;
            let mut index: IndexConfig = config.index;
            if let Some(k) = kind {
                index.kind = k;
            }
            index.ivf.nlist = nlist.unwrap_or(index.ivf.nlist);
            index.ivf.nprobe = nprobe.unwrap_or(index.ivf.nprobe);
            index.hnsw.m = m.unwrap_or(index.hnsw.m);
            index.hnsw.ef_construction = ef_construction.unwrap_or(index.hnsw.ef_construction);
            index.hnsw.ef_search = ef_search.unwrap_or(index.hnsw.ef_search);
            if let Some(s) = seed {
                index.ivf.seed = s;
                index.hnsw.seed = s;
            }
            index.dimension = snap.store.dimension();
            index.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            snap.rebuild_indexes(index, exec).map_err(data)?;
            let name = dir.save(&snap).map_err(data)?;
            println!("wrote {name} with {} index", index.kind.as_str());
        }
        Command::Query { snapshot, text, k, now } => {
            let engine = open_engine(config, &snapshot)?;
            print_json(&engine.query(&QueryRequest { text, k, now })?)?;
        }
        Command::Suggest { snapshot, text, generator, now } => {
            let generator = match generator.as_deref() {
                None => None,
                Some("extractive") => Some(GeneratorKind::Extractive),
                Some("remote") => Some(GeneratorKind::Remote),
                Some(other) => return Err(CliError::Usage(format!("unknown generator {other:?}"))),
            };
            let engine = open_engine(config, &snapshot)?;
            print_json(&engine.suggest(&SuggestRequest { text, generator, now })?)?;
        }
        Command::Eval { snapshot, judgments, k, now, out } => {
            let judgments = read_judgments(&judgments)?;
            let engine = open_engine(config, &snapshot)?;
            let gen = engine.generation();
            if gen.kb.chunk_count() == 0 {
                return Err(data(EngineError::EmptyCorpus));
            }
            let template = engine.query_spec("", None, now);
            let report = evaluate(&judgments, &gen.kb, gen.embedder.as_ref(), &template, &k).map_err(data)?;
            match out {
                Some(p) => std::fs::write(&p, serde_json::to_vec_pretty(&report).map_err(data)?).map_err(data)?,
                None => print_json(&report)?,
            }
        }
        Command::Bench { n, dim, seed, clusters, latent_dim, noise, queries, kinds, json } => {
            if n == 0 || dim == 0 || queries == 0 {
                return Err(CliError::Usage("n, dim and queries must be positive".into()));
            }
            let spec = MixtureSpec { n, dim, seed, clusters, latent_dim, noise };
            let configs: Vec<IndexConfig> = kinds
                .iter()
                .map(|k| IndexConfig { kind: *k, dimension: dim, ..config.index })
                .collect();
            let outcome = bench_indexes(&spec, &configs, queries, exec).map_err(data)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", render_bench_table(&outcome.rows));
            if let Some(p) = json {
                let report = bench_report(&spec, outcome);
                std::fs::write(&p, serde_json::to_vec_pretty(&report).map_err(data)?).map_err(data)?;
            }
        }
        Command::Serve { snapshot, bind } => {
            let addr = bind.unwrap_or_else(|| config.bind.clone());
            let engine = Arc::new(open_engine(config, &snapshot)?);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(data)?;
            rt.block_on(crate::http::serve(engine, &addr, |a| println!("listening on http://{a}")))
                .map_err(data)?;
        }
        Command::Refresh { snapshot } => {
            let engine = open_engine(config, &snapshot)?;
            let name = engine.refresh(Utc::now())?;
            println!("wrote {name}");
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Data(m)) = &e;
            eprintln!("error: {m}");
            e.exit_code()
        }
    }
}
