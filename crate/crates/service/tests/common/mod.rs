#![allow(dead_code)]

use std::path::Path;

use chrono::{DateTime, Utc};
use ticketrag::corpus::{CleaningConfig, Corpus};
use ticketrag::embedding::{EmbedderSpec, HashingEmbedder};
use ticketrag::exec::Execution;
use ticketrag::synthetic::{planted_duplicate_corpus, PlantedCorpus};
use ticketrag_service::config::ServiceConfig;
use ticketrag_service::engine::Engine;
use ticketrag_service::snapshot::{Snapshot, SnapshotDir};

pub fn now() -> DateTime<Utc> {
    "2025-06-01T00:00:00Z".parse().unwrap()
}

pub fn planted(n: usize) -> PlantedCorpus {
    planted_duplicate_corpus(n, 42, now())
}

/// Writes a snapshot of `corpus` under `root` with default settings.
pub fn write_snapshot(root: &Path, corpus: Corpus) {
    let config = ServiceConfig::default();
    let embedder = HashingEmbedder::new(EmbedderSpec::default()).unwrap();
    let snap = Snapshot::build(corpus, &embedder, config.index, config.bm25, now(), Execution::default()).unwrap();
    SnapshotDir::new(root).save(&snap).unwrap();
}

pub fn planted_snapshot(root: &Path, p: &PlantedCorpus) {
    write_snapshot(root, Corpus::from_parts(p.tickets.clone(), p.prs.clone(), &CleaningConfig::default()));
}

pub fn open(root: &Path) -> Engine {
    Engine::open(ServiceConfig::default(), SnapshotDir::new(root)).unwrap()
}
