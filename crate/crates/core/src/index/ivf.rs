//! Inverted lists over seeded k-means centroids.
//!
//! Training and probing both rank centroids by squared L2 distance, computed
//! as `‖c‖² - 2 q·c` (the query norm is constant per query). Under the cosine
//! metric the centroids are renormalized after every update, which makes this
//! spherical k-means and ranks centroids exactly as the inner product would.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::{dot, squared_norm, Candidate, TopK};
use super::{IvfParams, Storage};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct IvfLists {
    pub(crate) dim: usize,
    pub(crate) normalize: bool,
    /// nlist * dim, row major.
    pub(crate) centroids: Vec<f32>,
    pub(crate) centroid_norms: Vec<f64>,
    /// Slots per list, ascending.
    pub(crate) lists: Vec<Vec<u32>>,
}

fn normalize_in_place(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

impl IvfLists {
    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn memory_bytes(&self) -> usize {
        self.centroids.len() * 4 + self.centroid_norms.len() * 8 + self.lists.iter().map(|l| l.len() * 4 + 24).sum::<usize>()
    }

    pub(crate) fn from_parts(dim: usize, normalize: bool, centroids: Vec<f32>, lists: Vec<Vec<u32>>) -> Self {
        let centroid_norms = centroids.chunks(dim).map(squared_norm).collect();
        IvfLists { dim, normalize, centroids, centroid_norms, lists }
    }

    /// Squared L2 distance minus the query's own norm; smaller is nearer.
    #[inline]
    fn coarse_distance(&self, q: &[f32], c: usize) -> f64 {
        self.centroid_norms[c] - 2.0 * dot(q, self.centroid(c))
    }

    /// Index of the nearest centroid, lowest index on ties.
    pub(crate) fn nearest(&self, q: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..self.nlist() {
            let d = self.coarse_distance(q, c);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    /// Seeded k-means. `normalize` selects spherical updates (cosine metric).
    pub(crate) fn train(storage: &Storage<'_>, params: &IvfParams, exec: Execution, normalize: bool) -> Self {
        let n = storage.len();
        let dim = storage.dim;
        let nlist = params.nlist;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut init = rand::seq::index::sample(&mut rng, n, nlist).into_vec();
        init.sort_unstable();
        let centroids: Vec<f32> = init.iter().flat_map(|&i| storage.vector(i as u32).iter().copied()).collect();
        let mut ivf = IvfLists::from_parts(dim, normalize, centroids, vec![Vec::new(); nlist]);

        let point_norms: Vec<f64> = exec.map_range(n, |i| squared_norm(storage.vector(i as u32)));
        for _ in 0..params.kmeans_iters {
            let mut assign: Vec<(usize, f64)> = exec.map_range(n, |i| {
                let c = ivf.nearest(storage.vector(i as u32));
                (c, point_norms[i] + ivf.coarse_distance(storage.vector(i as u32), c))
            });
            ivf.reseed_empty(storage, &mut assign);

            let mut sums = vec![0f64; nlist * dim];
            let mut counts = vec![0usize; nlist];
            for (i, &(c, _)) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(storage.vector(i as u32)) {
                    *s += f64::from(x);
                }
            }
            for c in 0..nlist {
                let row = &mut sums[c * dim..(c + 1) * dim];
                if counts[c] == 0 {
                    continue;
                }
                row.iter_mut().for_each(|x| *x /= counts[c] as f64);
                if normalize && !normalize_in_place(row) {
                    continue;
                }
                for (dst, &src) in ivf.centroids[c * dim..(c + 1) * dim].iter_mut().zip(row.iter()) {
                    *dst = src as f32;
                }
            }
            ivf.centroid_norms = ivf.centroids.chunks(dim).map(squared_norm).collect();
        }

        let assign: Vec<usize> = exec.map_range(n, |i| ivf.nearest(storage.vector(i as u32)));
        for (slot, c) in assign.into_iter().enumerate() {
            ivf.lists[c].push(slot as u32);
        }
        ivf
    }

    /// Moves the point farthest from its centroid into each empty cluster.
    fn reseed_empty(&mut self, storage: &Storage<'_>, assign: &mut [(usize, f64)]) {
        let mut sizes = vec![0usize; self.nlist()];
        for &(c, _) in assign.iter() {
            sizes[c] += 1;
        }
        for c in 0..self.nlist() {
            if sizes[c] > 0 {
                continue;
            }
            let far = assign
                .iter()
                .enumerate()
                .filter(|(_, &(owner, _))| sizes[owner] > 1)
                .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i);
            let Some(i) = far else { break };
            sizes[assign[i].0] -= 1;
            sizes[c] += 1;
            assign[i] = (c, 0.0);
            let mut row: Vec<f64> = storage.vector(i as u32).iter().map(|&x| f64::from(x)).collect();
            if self.normalize {
                normalize_in_place(&mut row);
            }
            for (dst, src) in self.centroids[c * self.dim..(c + 1) * self.dim].iter_mut().zip(row) {
                *dst = src as f32;
            }
            self.centroid_norms[c] = squared_norm(self.centroid(c));
        }
    }

    pub(crate) fn assign(&mut self, storage: &Storage<'_>, slot: u32) {
        let c = self.nearest(storage.vector(slot));
        self.lists[c].push(slot);
    }

    /// Centroids ordered nearest first, ties by index.
    pub(crate) fn probe_order(&self, q: &[f32]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = (0..self.nlist()).map(|c| (self.coarse_distance(q, c), c)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, c)| c).collect()
    }

    pub(crate) fn search(&self, storage: &Storage<'_>, q: &[f32], k: usize, nprobe: usize) -> Vec<Candidate> {
        let mut top = TopK::new(k);
        for c in self.probe_order(q).into_iter().take(nprobe) {
            for &slot in &self.lists[c] {
                top.push(storage.candidate(q, slot));
            }
        }
        top.into_sorted()
    }
}
