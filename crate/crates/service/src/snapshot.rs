//! On-disk service snapshots.
//!
//! A snapshot root holds numbered generations plus a `CURRENT` file naming
//! the live one:
//!
//! ```text
//! root/
//!   CURRENT                  "gen-0003\n"
//!   gen-0003/
//!     manifest.rtsn corpus.rtsn embeddings.rtsn lexical.rtsn suggestions.rtsn
//!     dense-ticket.rtix dense-comment.rtix dense-pr.rtix
//!     journal.jsonl          appended while serving
//! ```
//!
//! `.rtsn` files are checksummed JSON frames: magic `RTSN`, format version
//! (u32 LE), payload length (u64 LE), payload, CRC32 of everything before it
//! (u32 LE). A generation is written into a temporary directory and renamed
//! into place before `CURRENT` is replaced, itself through a temporary file
//! and a rename.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ticketrag::corpus::{Corpus, CorpusCounts, Partition};
use ticketrag::embedding::{embed_corpus, EmbedError, Embedder, EmbedderSpec, EmbeddingStore};
use ticketrag::exec::Execution;
use ticketrag::index::{IndexConfig, IndexError, PersistError, VectorIndex};
use ticketrag::lexical::Bm25Params;
use ticketrag::retrieval::{DenseIndexSet, KnowledgeBase, LexicalIndexSet};

use crate::feedback::SuggestionRecord;
use crate::journal::{Journal, JournalEntry, JournalError};

pub const FRAME_MAGIC: [u8; 4] = *b"RTSN";
pub const FRAME_VERSION: u32 = 1;
pub const CURRENT_FILE: &str = "CURRENT";
pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("no snapshot at {0} (missing CURRENT)")]
    Missing(PathBuf),
    #[error("{file}: {message}")]
    Corrupt { file: String, message: String },
    #[error("{file}: {source}")]
    Index { file: String, source: PersistError },
    #[error("inconsistent snapshot: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Build(#[from] IndexError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("snapshot io: {0}")]
    Io(#[from] io::Error),
}

/// Frames `payload` as an `.rtsn` file body.
pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 20);
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks magic, version, length and checksum, returning the payload.
pub fn decode_frame(bytes: &[u8]) -> Result<&[u8], String> {
    if bytes.len() < 20 {
        return Err(format!("truncated: {} bytes", bytes.len()));
    }
    if bytes[..4] != FRAME_MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FRAME_VERSION {
        return Err(format!("unsupported frame version {version}"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if len != (bytes.len() - 20) as u64 {
        return Err(format!("length field {len} does not match file size {}", bytes.len()));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(format!("checksum mismatch (stored {stored:08x}, computed {computed:08x})"));
    }
    Ok(&bytes[16..body_end])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub created_at: DateTime<Utc>,
    pub embedder: EmbedderSpec,
    pub index: IndexConfig,
    pub bm25: Bm25Params,
    pub counts: CorpusCounts,
}

/// Everything the service serves from, plus stored suggestions.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub manifest: Manifest,
    pub corpus: Corpus,
    pub store: EmbeddingStore,
    pub dense: DenseIndexSet,
    pub lexical: LexicalIndexSet,
    pub suggestions: Vec<SuggestionRecord>,
}

impl Snapshot {
    /// Embeds `corpus` and builds all indices.
    pub fn build(
        corpus: Corpus,
        embedder: &dyn Embedder,
        index: IndexConfig,
        bm25: Bm25Params,
        now: DateTime<Utc>,
        exec: Execution,
    ) -> Result<Snapshot, SnapshotError> {
        let store = embed_corpus(&corpus.chunks, embedder, now, exec)?;
        let dense = DenseIndexSet::build(&store, index, exec)?;
        let lexical = LexicalIndexSet::build(&corpus.chunks, bm25);
        let manifest = Manifest {
            created_at: now,
            embedder: embedder.spec().clone(),
            index: IndexConfig { dimension: store.dimension(), ..index },
            bm25,
            counts: corpus.counts(),
        };
        Ok(Snapshot { manifest, corpus, store, dense, lexical, suggestions: Vec::new() })
    }

    /// Rebuilds the dense indices from the stored embeddings.
    pub fn rebuild_indexes(&mut self, index: IndexConfig, exec: Execution) -> Result<(), SnapshotError> {
        self.dense = DenseIndexSet::build(&self.store, index, exec)?;
        self.manifest.index = IndexConfig { dimension: self.store.dimension(), ..index };
        Ok(())
    }

    /// Re-embeds every chunk with `embedder` and rebuilds both index families.
    pub fn refresh(&mut self, embedder: &dyn Embedder, now: DateTime<Utc>, exec: Execution) -> Result<(), SnapshotError> {
        let store = embed_corpus(&self.corpus.chunks, embedder, now, exec)?;
        let mut index = self.manifest.index;
        index.dimension = store.dimension();
        self.dense = DenseIndexSet::build(&store, index, exec)?;
        self.lexical = LexicalIndexSet::build(&self.corpus.chunks, self.manifest.bm25);
        self.store = store;
        self.manifest.embedder = embedder.spec().clone();
        self.manifest.index = index;
        self.manifest.created_at = now;
        Ok(())
    }

    pub fn knowledge_base(&self) -> KnowledgeBase {
        KnowledgeBase::from_parts(
            self.corpus.chunks.clone(),
            self.corpus.links.clone(),
            self.dense.clone(),
            self.lexical.clone(),
        )
    }

    /// Every stored embedding belongs to a chunk and vice versa, every index
    /// id resolves to a chunk of its partition, and all parts agree on the
    /// embedding model.
    pub fn validate(&self) -> Result<(), SnapshotError> {
        let bad = |m: String| Err(SnapshotError::Inconsistent(m));
        if self.store.model_version() != self.manifest.embedder.model_version {
            return bad(format!(
                "embeddings are from {} but the manifest names {}",
                self.store.model_version(),
                self.manifest.embedder.model_version
            ));
        }
        if self.dense.model_version != self.store.model_version() {
            return bad(format!("dense indices are from {}", self.dense.model_version));
        }
        let chunk_ids: HashSet<&str> = self.corpus.chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        if chunk_ids.len() != self.store.len() || self.store.records().any(|r| !chunk_ids.contains(r.chunk_id.as_str())) {
            return bad("embedding store does not cover exactly the corpus chunks".into());
        }
        for p in Partition::ALL {
            let idx = self.dense.get(p).map_or(0, VectorIndex::len);
            if idx != self.store.counts().get(p) {
                return bad(format!("{p} index holds {idx} vectors, store has {}", self.store.counts().get(p)));
            }
        }
        self.knowledge_base().validate().map_err(SnapshotError::Inconsistent)?;
        self.corpus.validate().map_err(SnapshotError::Inconsistent)
    }
}

/// A snapshot root directory.
#[derive(Debug, Clone)]
pub struct SnapshotDir {
    root: PathBuf,
}

fn gen_name(n: u64) -> String {
    format!("gen-{n:04}")
}

fn parse_gen(name: &str) -> Option<u64> {
    name.strip_prefix("gen-")?.parse().ok()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> io::Result<()> {
    let payload = serde_json::to_vec(value).map_err(io::Error::other)?;
    write_file(dir, name, &encode_frame(&payload))
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T, SnapshotError> {
    let bytes = fs::read(dir.join(name))?;
    let corrupt = |message: String| SnapshotError::Corrupt { file: name.to_owned(), message };
    let payload = decode_frame(&bytes).map_err(corrupt)?;
    serde_json::from_slice(payload).map_err(|e| corrupt(e.to_string()))
}

fn dense_file(p: Partition) -> String {
    format!("dense-{p}.rtix")
}

fn sync_dir(dir: &Path) {
    // Directory fsync is not available everywhere; the renames are still atomic.
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
}

/// A snapshot read from disk, with its journal replayed into the suggestions.
#[derive(Debug)]
pub struct Loaded {
    pub snapshot: Snapshot,
    pub generation: String,
    pub journal: Journal,
    pub torn_journal_tail: bool,
}

impl SnapshotDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SnapshotDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Name of the live generation, if any.
    pub fn current(&self) -> Result<Option<String>, SnapshotError> {
        match fs::read_to_string(self.root.join(CURRENT_FILE)) {
            Ok(s) => Ok(Some(s.trim().to_owned())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn generation_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn next_generation(&self) -> Result<u64, SnapshotError> {
        let mut max = 0;
        if self.root.exists() {
            for entry in fs::read_dir(&self.root)? {
                if let Some(n) = entry?.file_name().to_str().and_then(parse_gen) {
                    max = max.max(n);
                }
            }
        }
        Ok(max + 1)
    }

    /// Writes `snap` as a new generation and makes it current. Returns the
    /// generation name.
    pub fn save(&self, snap: &Snapshot) -> Result<String, SnapshotError> {
        fs::create_dir_all(&self.root)?;
        let name = gen_name(self.next_generation()?);
        let tmp = self.root.join(format!(".{name}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        write_json(&tmp, "manifest.rtsn", &snap.manifest)?;
        write_json(&tmp, "corpus.rtsn", &snap.corpus)?;
        write_json(&tmp, "embeddings.rtsn", &snap.store)?;
        write_json(&tmp, "lexical.rtsn", &snap.lexical)?;
        write_json(&tmp, "suggestions.rtsn", &snap.suggestions)?;
        for (p, idx) in &snap.dense.partitions {
            write_file(&tmp, &dense_file(*p), &idx.save())?;
        }
        sync_dir(&tmp);
        fs::rename(&tmp, self.root.join(&name))?;
        let current_tmp = format!(".{CURRENT_FILE}.tmp");
        write_file(&self.root, &current_tmp, format!("{name}\n").as_bytes())?;
        fs::rename(self.root.join(&current_tmp), self.root.join(CURRENT_FILE))?;
        sync_dir(&self.root);
        Ok(name)
    }

    /// Reads one generation's files without touching its journal.
    pub fn read_generation(&self, name: &str) -> Result<Snapshot, SnapshotError> {
        let dir = self.generation_dir(name);
        let manifest: Manifest = read_json(&dir, "manifest.rtsn")?;
        let corpus: Corpus = read_json(&dir, "corpus.rtsn")?;
        let store: EmbeddingStore = read_json(&dir, "embeddings.rtsn")?;
        let lexical: LexicalIndexSet = read_json(&dir, "lexical.rtsn")?;
        let suggestions: Vec<SuggestionRecord> = read_json(&dir, "suggestions.rtsn")?;
        let mut partitions = BTreeMap::new();
        for p in Partition::ALL {
            let file = dense_file(p);
            let bytes = fs::read(dir.join(&file))?;
            let idx = VectorIndex::load(&bytes).map_err(|source| SnapshotError::Index { file, source })?;
            partitions.insert(p, idx);
        }
        let dense = DenseIndexSet { model_version: store.model_version().to_owned(), partitions };
        let snap = Snapshot { manifest, corpus, store, dense, lexical, suggestions };
        snap.validate()?;
        Ok(snap)
    }

    /// Loads the current generation and replays its journal.
    pub fn load(&self) -> Result<Loaded, SnapshotError> {
        let name = self.current()?.ok_or_else(|| SnapshotError::Missing(self.root.clone()))?;
        let mut snapshot = self.read_generation(&name)?;
        let (journal, replay) = Journal::open(&self.generation_dir(&name).join(JOURNAL_FILE))?;
        apply_journal(&mut snapshot.suggestions, replay.entries)?;
        Ok(Loaded { snapshot, generation: name, journal, torn_journal_tail: replay.torn_tail })
    }
}

/// Folds journal entries into `records`, in order.
pub fn apply_journal(records: &mut Vec<SuggestionRecord>, entries: Vec<JournalEntry>) -> Result<(), SnapshotError> {
    for e in entries {
        match e {
            JournalEntry::Suggestion(r) => records.push(r),
            JournalEntry::Feedback(ev) => {
                let rec = records.iter_mut().find(|r| r.suggestion.suggestion_id == ev.suggestion_id).ok_or_else(|| {
                    SnapshotError::Inconsistent(format!("feedback for unknown suggestion {}", ev.suggestion_id))
                })?;
                rec.feedback.push(ev);
            }
        }
    }
    Ok(())
}
