//! Layered proximity graph (HNSW).
//!
//! Node levels are drawn from a geometric distribution with `mL = 1/ln(M)`.
//! The draw for a slot is a pure function of `(seed, slot)`, so an index built
//! in one go, built incrementally, or reloaded from disk and extended all end
//! up with the same levels. Neighbor lists are chosen with the diversity
//! heuristic and capped at `M` per node on upper layers and `2M` on layer 0.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::kernel::{dot, Candidate};
use super::{HnswParams, Storage};

const MAX_LEVEL: usize = 31;

#[derive(Debug, Clone, PartialEq)]
pub struct HnswGraph {
    pub(crate) params: HnswParams,
    /// `links[slot][layer]`; a node has `level + 1` layers.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
    pub(crate) max_level: usize,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Level of the node stored in `slot`.
pub(crate) fn level_for(params: &HnswParams, slot: u32) -> usize {
    let h = mix64(params.seed ^ mix64(u64::from(slot)));
    // uniform in (0, 1]
    let u = ((h >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let ml = 1.0 / (params.m as f64).ln();
    ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

thread_local! {
    static VISITED: RefCell<Visited> = const { RefCell::new(Visited { marks: Vec::new(), epoch: 0 }) };
}

impl HnswGraph {
    pub fn new(params: HnswParams) -> Self {
        HnswGraph { params, links: Vec::new(), entry: None, max_level: 0 }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn entry_point(&self) -> Option<u32> {
        self.entry
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn level(&self, slot: u32) -> usize {
        self.links[slot as usize].len() - 1
    }

    pub fn neighbors(&self, slot: u32, layer: usize) -> &[u32] {
        &self.links[slot as usize][layer]
    }

    pub(crate) fn memory_bytes(&self) -> usize {
        self.links
            .iter()
            .map(|layers| 24 + layers.iter().map(|l| 24 + l.capacity() * 4).sum::<usize>())
            .sum()
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    /// Best-first beam search on one layer. Returns up to `ef` candidates,
    /// best first.
    fn search_layer(&self, storage: &Storage<'_>, q: &[f32], entry: &[Candidate], ef: usize, layer: usize) -> Vec<Candidate> {
        VISITED.with(|cell| {
            let mut visited = cell.borrow_mut();
            let n = self.links.len();
            if visited.marks.len() < n {
                visited.marks.resize(n, 0);
            }
            visited.epoch = visited.epoch.wrapping_add(1);
            if visited.epoch == 0 {
                visited.marks.iter_mut().for_each(|m| *m = 0);
                visited.epoch = 1;
            }
            let epoch = visited.epoch;

            let mut candidates: BinaryHeap<Candidate> = BinaryHeap::with_capacity(ef * 2);
            let mut results: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(ef + 1);
            for &e in entry {
                if visited.marks[e.slot as usize] == epoch {
                    continue;
                }
                visited.marks[e.slot as usize] = epoch;
                candidates.push(e);
                results.push(Reverse(e));
                if results.len() > ef {
                    results.pop();
                }
            }

            while let Some(c) = candidates.pop() {
                let worst = results.peek().expect("non-empty").0;
                if results.len() >= ef && c < worst {
                    break;
                }
                for &nb in &self.links[c.slot as usize][layer] {
                    let mark = &mut visited.marks[nb as usize];
                    if *mark == epoch {
                        continue;
                    }
                    *mark = epoch;
                    let cand = storage.candidate(q, nb);
                    let worst = results.peek().expect("non-empty").0;
                    if results.len() < ef || cand > worst {
                        candidates.push(cand);
                        results.push(Reverse(cand));
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }

            let mut out: Vec<Candidate> = results.into_iter().map(|r| r.0).collect();
            out.sort_by(|a, b| b.cmp(a));
            out
        })
    }

    /// Diversity heuristic: walk candidates best first and keep one only if
    /// it is closer to the base point than to every neighbor already kept.
    fn select_neighbors(storage: &Storage<'_>, candidates: &[Candidate], m: usize) -> Vec<u32> {
        if candidates.len() <= m {
            return candidates.iter().map(|c| c.slot).collect();
        }
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        for c in candidates {
            if kept.len() >= m {
                break;
            }
            let v = storage.vector(c.slot);
            if kept.iter().all(|&r| dot(v, storage.vector(r)) <= c.score) {
                kept.push(c.slot);
            }
        }
        kept
    }

    fn greedy_descend(&self, storage: &Storage<'_>, q: &[f32], mut ep: Candidate, from: usize, to: usize) -> Candidate {
        for layer in (to..=from).rev() {
            ep = self.search_layer(storage, q, &[ep], 1, layer)[0];
        }
        ep
    }

    /// Inserts `slot`, which must be the next unseen slot.
    pub(crate) fn insert(&mut self, storage: &Storage<'_>, slot: u32) {
        assert_eq!(slot as usize, self.links.len(), "HNSW slots are inserted in order");
        let level = level_for(&self.params, slot);
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            self.max_level = level;
            return;
        };
        let q = storage.vector(slot);
        let mut ep = storage.candidate(q, entry);
        if level < self.max_level {
            ep = self.greedy_descend(storage, q, ep, self.max_level, level + 1);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(storage, q, &eps, self.params.ef_construction, layer);
            let chosen = Self::select_neighbors(storage, &found, self.params.m);
            let cap = self.max_links(layer);
            for &nb in &chosen {
                self.links[nb as usize][layer].push(slot);
                if self.links[nb as usize][layer].len() > cap {
                    let base = storage.vector(nb);
                    let mut cands: Vec<Candidate> = self.links[nb as usize][layer]
                        .iter()
                        .map(|&s| storage.candidate(base, s))
                        .collect();
                    cands.sort_by(|a, b| b.cmp(a));
                    self.links[nb as usize][layer] = Self::select_neighbors(storage, &cands, cap);
                }
            }
            self.links[slot as usize][layer] = chosen;
            eps = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(slot);
        }
    }

    pub(crate) fn search(&self, storage: &Storage<'_>, q: &[f32], k: usize, ef: usize) -> Vec<Candidate> {
        let Some(entry) = self.entry else { return Vec::new() };
        let mut ep = storage.candidate(q, entry);
        if self.max_level > 0 {
            ep = self.greedy_descend(storage, q, ep, self.max_level, 1);
        }
        let mut found = self.search_layer(storage, q, &[ep], ef.max(k), 0);
        found.truncate(k);
        found
    }
}

#[cfg(test)]
mod tests {
    use super::super::{IndexConfig, VectorIndex};
    use super::*;
    use crate::exec::Execution;

    fn points(n: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f32>)> {
        (0..n)
            .map(|i| {
                let mut v: Vec<f32> = (0..dim)
                    .map(|j| {
                        let h = mix64(seed ^ mix64((i * dim + j) as u64));
                        (h >> 11) as f32 / (1u64 << 53) as f32 - 0.5
                    })
                    .collect();
                let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                (format!("p{i:04}"), v)
            })
            .collect()
    }

    fn build(pts: &[(String, Vec<f32>)], params: HnswParams) -> VectorIndex {
        let cfg = IndexConfig::hnsw(pts[0].1.len(), params);
        VectorIndex::build(pts.iter().map(|(i, v)| (i.as_str(), v.as_slice())), cfg, Execution::Sequential).unwrap()
    }

    #[test]
    fn level_distribution_is_geometric() {
        let p = HnswParams { m: 16, ..HnswParams::default() };
        let n = 100_000;
        let above0 = (0..n).filter(|&s| level_for(&p, s) >= 1).count() as f64 / n as f64;
        // P(level >= 1) = 1/M
        assert!((above0 - 1.0 / 16.0).abs() < 0.005, "{above0}");
    }

    #[test]
    fn degree_caps_hold() {
        let pts = points(600, 16, 1);
        let p = HnswParams { m: 6, ef_construction: 40, ef_search: 20, seed: 9 };
        let idx = build(&pts, p);
        let g = idx.hnsw_graph().unwrap();
        for s in 0..g.len() as u32 {
            for layer in 0..=g.level(s) {
                let cap = if layer == 0 { 12 } else { 6 };
                assert!(g.neighbors(s, layer).len() <= cap);
                assert!(!g.neighbors(s, layer).contains(&s));
            }
        }
    }

    #[test]
    fn seeded_builds_agree() {
        let pts = points(300, 8, 2);
        let p = HnswParams { m: 8, ef_construction: 50, ef_search: 16, seed: 4 };
        let a = build(&pts, p);
        let b = build(&pts, p);
        assert_eq!(a, b);
        for (_, q) in pts.iter().take(25) {
            assert_eq!(a.search(q, 5).unwrap(), b.search(q, 5).unwrap());
        }
    }

    #[test]
    fn incremental_matches_batch() {
        let pts = points(200, 8, 3);
        let p = HnswParams { m: 8, ef_construction: 50, ef_search: 16, seed: 4 };
        let batch = build(&pts, p);
        let mut inc = build(&pts[..120], p);
        inc.add_entries(pts[120..].iter().map(|(i, v)| (i.as_str(), v.as_slice()))).unwrap();
        assert_eq!(batch, inc);
    }

    #[test]
    fn wide_beam_is_exhaustive() {
        let pts = points(500, 12, 5);
        let idx = build(&pts, HnswParams { m: 8, ef_construction: 64, ef_search: 500, seed: 1 });
        let flat = VectorIndex::build(
            pts.iter().map(|(i, v)| (i.as_str(), v.as_slice())),
            IndexConfig::flat(12),
            Execution::Sequential,
        )
        .unwrap();
        for (_, q) in pts.iter().step_by(7) {
            assert_eq!(idx.search(q, 10).unwrap(), flat.search(q, 10).unwrap());
        }
    }
}
