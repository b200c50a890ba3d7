//! Binary index format (`.rtix`).
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "RTIX" | version u32 | kind u8 | metric u8 | dim u32 | count u64
//! config block (ivf: nlist, nprobe, kmeans_iters u32, seed u64;
//!               hnsw: M, ef_construction, ef_search u32, seed u64; flat: empty)
//! id table: count x (len u32, utf-8 bytes)
//! vectors: count x dim f32
//! structure (ivf: centroids nlist x dim f32, then per list len u32 + slots u32;
//!            hnsw: entry u32 (MAX = none), max_level u32, then per node
//!            level u32 and per layer len u32 + neighbor u32s)
//! crc32 of everything above, u32
//! ```

use super::{HnswGraph, HnswParams, IndexConfig, IndexKind, IvfLists, IvfParams, Metric, Structure, VectorIndex};

pub const MAGIC: [u8; 4] = *b"RTIX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PersistError {
    #[error("bad magic: not an index file")]
    BadMagic,
    #[error("unsupported format version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("truncated at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt index at byte {offset}: {message}")]
    Corrupt { offset: usize, message: String },
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        self.0.reserve(vs.len() * 4);
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn u32s(&mut self, vs: &[u32]) {
        self.u32(vs.len());
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub(crate) fn save(index: &VectorIndex) -> Vec<u8> {
    let cfg = index.config();
    let mut w = Writer(Vec::with_capacity(64 + index.raw_vectors().len() * 4));
    w.0.extend_from_slice(&MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u8(match cfg.kind {
        IndexKind::Flat => 0,
        IndexKind::Ivf => 1,
        IndexKind::Hnsw => 2,
    });
    w.u8(match cfg.metric {
        Metric::Cosine => 0,
        Metric::Dot => 1,
    });
    w.u32(cfg.dimension);
    w.u64(index.len() as u64);
    match cfg.kind {
        IndexKind::Flat => {}
        IndexKind::Ivf => {
            w.u32(cfg.ivf.nlist);
            w.u32(cfg.ivf.nprobe);
            w.u32(cfg.ivf.kmeans_iters);
            w.u64(cfg.ivf.seed);
        }
        IndexKind::Hnsw => {
            w.u32(cfg.hnsw.m);
            w.u32(cfg.hnsw.ef_construction);
            w.u32(cfg.hnsw.ef_search);
            w.u64(cfg.hnsw.seed);
        }
    }
    for id in index.ids() {
        w.u32(id.len());
        w.0.extend_from_slice(id.as_bytes());
    }
    w.f32s(index.raw_vectors());
    match index.structure() {
        Structure::Flat => {}
        Structure::Ivf(l) => {
            w.f32s(&l.centroids);
            for list in &l.lists {
                w.u32s(list);
            }
        }
        Structure::Hnsw(g) => {
            w.0.extend_from_slice(&g.entry.unwrap_or(u32::MAX).to_le_bytes());
            w.u32(g.max_level);
            for layers in &g.links {
                w.u32(layers.len() - 1);
                for l in layers {
                    w.u32s(l);
                }
            }
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let rest = self.buf.len() - self.pos;
        if n > rest {
            return Err(PersistError::Truncated { offset: self.pos, needed: n - rest });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn usize(&mut self) -> Result<usize, PersistError> {
        self.u32().map(|v| v as usize)
    }
    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, PersistError> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.corrupt("length overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
    fn slots(&mut self, count: usize) -> Result<Vec<u32>, PersistError> {
        let at = self.pos;
        let len = self.usize()?;
        let raw = self.take(len.checked_mul(4).ok_or_else(|| self.corrupt("length overflow"))?)?;
        let v: Vec<u32> = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if let Some(bad) = v.iter().find(|&&s| s as usize >= count) {
            return Err(PersistError::Corrupt { offset: at, message: format!("slot {bad} out of range") });
        }
        Ok(v)
    }
    fn corrupt(&self, message: impl Into<String>) -> PersistError {
        PersistError::Corrupt { offset: self.pos, message: message.into() }
    }
}

pub(crate) fn load(bytes: &[u8]) -> Result<VectorIndex, PersistError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(PersistError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(PersistError::Truncated { offset: 4, needed: 8 - bytes.len() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    if bytes.len() < 12 {
        return Err(PersistError::Truncated { offset: bytes.len(), needed: 12 - bytes.len() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(PersistError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let kind = match r.u8()? {
        0 => IndexKind::Flat,
        1 => IndexKind::Ivf,
        2 => IndexKind::Hnsw,
        k => return Err(PersistError::Corrupt { offset: 8, message: format!("unknown index kind {k}") }),
    };
    let metric = match r.u8()? {
        0 => Metric::Cosine,
        1 => Metric::Dot,
        m => return Err(PersistError::Corrupt { offset: 9, message: format!("unknown metric {m}") }),
    };
    let dim = r.usize()?;
    let count_at = r.pos;
    let count = usize::try_from(r.u64()?).map_err(|_| PersistError::Corrupt { offset: count_at, message: "count overflow".into() })?;
    let mut config = IndexConfig::new(kind, metric, dim);
    match kind {
        IndexKind::Flat => {}
        IndexKind::Ivf => {
            config.ivf = IvfParams { nlist: r.usize()?, nprobe: r.usize()?, kmeans_iters: r.usize()?, seed: r.u64()? };
        }
        IndexKind::Hnsw => {
            config.hnsw =
                HnswParams { m: r.usize()?, ef_construction: r.usize()?, ef_search: r.usize()?, seed: r.u64()? };
        }
    }
    config.validate().map_err(|e| PersistError::Corrupt { offset: 10, message: e.to_string() })?;

    // Every id costs at least four bytes, which bounds allocations on hostile input.
    if count > body.len() / 4 {
        return Err(PersistError::Corrupt { offset: count_at, message: format!("count {count} exceeds file size") });
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let len = r.usize()?;
        let raw = r.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| PersistError::Corrupt { offset: at, message: "id is not valid UTF-8".into() })?;
        ids.push(id.to_owned());
    }
    let vectors_at = r.pos;
    let n_floats = count.checked_mul(dim).ok_or_else(|| r.corrupt("vector block overflow"))?;
    let vectors = r.f32s(n_floats)?;

    let structure = match kind {
        IndexKind::Flat => Structure::Flat,
        IndexKind::Ivf => {
            let nlist = config.ivf.nlist;
            let centroids = r.f32s(nlist.checked_mul(dim).ok_or_else(|| r.corrupt("centroid block overflow"))?)?;
            let mut lists = Vec::with_capacity(nlist);
            let mut seen = 0usize;
            for _ in 0..nlist {
                let l = r.slots(count)?;
                seen += l.len();
                lists.push(l);
            }
            if seen != count {
                return Err(r.corrupt(format!("inverted lists hold {seen} slots for {count} vectors")));
            }
            Structure::Ivf(IvfLists::from_parts(dim, metric == Metric::Cosine, centroids, lists))
        }
        IndexKind::Hnsw => {
            let entry_at = r.pos;
            let entry = match r.u32()? {
                u32::MAX => None,
                e if (e as usize) < count => Some(e),
                e => return Err(PersistError::Corrupt { offset: entry_at, message: format!("entry point {e} out of range") }),
            };
            let max_level = r.usize()?;
            let mut links = Vec::with_capacity(count);
            for _ in 0..count {
                let at = r.pos;
                let level = r.usize()?;
                if level > max_level {
                    return Err(PersistError::Corrupt { offset: at, message: format!("node level {level} above max {max_level}") });
                }
                let mut layers = Vec::with_capacity(level + 1);
                for _ in 0..=level {
                    layers.push(r.slots(count)?);
                }
                links.push(layers);
            }
            if entry.is_none() != (count == 0) {
                return Err(PersistError::Corrupt { offset: entry_at, message: "entry point inconsistent with count".into() });
            }
            Structure::Hnsw(HnswGraph { params: config.hnsw, links, entry, max_level })
        }
    };
    if r.pos != body.len() {
        return Err(r.corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    VectorIndex::from_parts(config, ids, vectors, structure)
        .map_err(|message| PersistError::Corrupt { offset: vectors_at, message })
}
