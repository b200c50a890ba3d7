//! Scoring kernels and the candidate ordering shared by all index kinds.

use std::cmp::Ordering;

/// Inner product with f64 accumulation over eight independent lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += f64::from(x[i]) * f64::from(y[i]);
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

#[inline]
pub fn squared_norm(a: &[f32]) -> f64 {
    dot(a, a)
}

/// A scored slot. `rank` is the slot's position in chunk-id order, so
/// comparing `(score, rank)` reproduces the public (score desc, chunk_id asc)
/// ordering without touching strings. `Greater` means better.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub score: f64,
    pub rank: u32,
    pub slot: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

/// Keeps the best `k` candidates seen so far.
pub struct TopK {
    k: usize,
    heap: std::collections::BinaryHeap<std::cmp::Reverse<Candidate>>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK { k, heap: std::collections::BinaryHeap::with_capacity(k + 1) }
    }

    #[inline]
    pub fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(std::cmp::Reverse(c));
        } else if let Some(worst) = self.heap.peek() {
            if c > worst.0 {
                self.heap.pop();
                self.heap.push(std::cmp::Reverse(c));
            }
        }
    }

    /// Best first.
    pub fn into_sorted(self) -> Vec<Candidate> {
        let mut v: Vec<Candidate> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.cmp(a));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn topk_orders_by_score_then_rank() {
        let mut t = TopK::new(3);
        for (score, rank) in [(0.5, 4), (0.9, 2), (0.5, 1), (0.1, 0), (0.9, 3)] {
            t.push(Candidate { score, rank, slot: rank });
        }
        let got: Vec<(f64, u32)> = t.into_sorted().iter().map(|c| (c.score, c.rank)).collect();
        assert_eq!(got, vec![(0.9, 2), (0.9, 3), (0.5, 1)]);
    }
}
