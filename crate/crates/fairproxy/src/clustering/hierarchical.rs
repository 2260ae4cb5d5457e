//! Agglomerative clustering with Ward, average, and complete linkage.
//!
//! Greedy merging of the globally cheapest pair, with ties broken by the
//! smallest (id, id) pair. Cluster ids follow the usual dendrogram
//! convention: input rows are 0..n-1 and the cluster created by merge t gets
//! id n+t. Ward costs come from centroids and sizes, so no distance matrix
//! is held for it; average/complete keep a slot-reused matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClusterResult, ClusterSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Ward,
    Average,
    Complete,
}

/// One dendrogram step: clusters `a` and `b` (a < b) merged at `cost` into
/// the cluster with id `new_id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub cost: f64,
    pub new_id: usize,
}

struct Agglomerator {
    linkage: Linkage,
    /// slot -> current cluster id (slots are reused by merges).
    ids: Vec<usize>,
    active: Vec<bool>,
    sizes: Vec<f64>,
    /// Ward only: slot -> centroid.
    centroids: Vec<Vec<f64>>,
    /// Average/complete only: symmetric slot-to-slot distances.
    dist: Vec<Vec<f64>>,
    /// slot -> member row indices.
    members: Vec<Vec<u32>>,
    /// slot -> (cost, other slot) of its current nearest neighbour.
    nn: Vec<Option<(f64, usize)>>,
    next_id: usize,
}

impl Agglomerator {
    fn new(points: &Array2<f64>, weights: Option<&[f64]>, linkage: Linkage) -> Self {
        let n = points.nrows();
        let sizes: Vec<f64> = match weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; n],
        };
        let centroids: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).to_vec()).collect();
        let dist = if linkage == Linkage::Ward {
            Vec::new()
        } else {
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = euclid(&centroids[i], &centroids[j]);
                    m[i][j] = d;
                    m[j][i] = d;
                }
            }
            m
        };
        Agglomerator {
            linkage,
            ids: (0..n).collect(),
            active: vec![true; n],
            sizes,
            centroids,
            dist,
            members: (0..n).map(|i| vec![i as u32]).collect(),
            nn: vec![None; n],
            next_id: n,
        }
    }

    fn cost(&self, a: usize, b: usize) -> f64 {
        match self.linkage {
            Linkage::Ward => {
                let (sa, sb) = (self.sizes[a], self.sizes[b]);
                sa * sb / (sa + sb) * dist2(&self.centroids[a], &self.centroids[b])
            }
            Linkage::Average | Linkage::Complete => self.dist[a][b],
        }
    }

    /// Orders candidate pairs by (cost, min id, max id).
    fn pair_key(&self, a: usize, b: usize) -> (f64, usize, usize) {
        let (ia, ib) = (self.ids[a], self.ids[b]);
        (self.cost(a, b), ia.min(ib), ia.max(ib))
    }

    fn scan_nn(&self, slot: usize) -> Option<(f64, usize)> {
        let mut best: Option<((f64, usize, usize), usize)> = None;
        for other in 0..self.active.len() {
            if other == slot || !self.active[other] {
                continue;
            }
            let key = self.pair_key(slot, other);
            if best.as_ref().is_none_or(|(bk, _)| key < *bk) {
                best = Some((key, other));
            }
        }
        best.map(|((cost, _, _), other)| (cost, other))
    }

    fn init_nn(&mut self) {
        for slot in 0..self.active.len() {
            if self.active[slot] {
                self.nn[slot] = self.scan_nn(slot);
            }
        }
    }

    /// Performs one merge of the globally cheapest pair; returns the record.
    fn merge_step(&mut self) -> Merge {
        // Global minimum over the cached per-slot nearest neighbours.
        let mut best: Option<((f64, usize, usize), usize, usize)> = None;
        for slot in 0..self.active.len() {
            if !self.active[slot] {
                continue;
            }
            let (cost, other) = self.nn[slot].expect("active slots have a neighbour");
            let (ia, ib) = (self.ids[slot], self.ids[other]);
            let key = (cost, ia.min(ib), ia.max(ib));
            if best.as_ref().is_none_or(|(bk, _, _)| key < *bk) {
                best = Some((key, slot, other));
            }
        }
        let ((cost, id_a, id_b), slot_a, slot_b) = best.expect("at least two active clusters");
        let (keep, drop) = (slot_a.min(slot_b), slot_a.max(slot_b));

        // Merge `drop` into `keep`.
        let (sa, sb) = (self.sizes[keep], self.sizes[drop]);
        let total = sa + sb;
        match self.linkage {
            Linkage::Ward => {
                let (ck, cd) = (self.centroids[keep].clone(), self.centroids[drop].clone());
                let merged: Vec<f64> = ck
                    .iter()
                    .zip(cd.iter())
                    .map(|(x, y)| (sa * x + sb * y) / total)
                    .collect();
                self.centroids[keep] = merged;
            }
            Linkage::Average => {
                for o in 0..self.active.len() {
                    if self.active[o] && o != keep && o != drop {
                        let d = (sa * self.dist[keep][o] + sb * self.dist[drop][o]) / total;
                        self.dist[keep][o] = d;
                        self.dist[o][keep] = d;
                    }
                }
            }
            Linkage::Complete => {
                for o in 0..self.active.len() {
                    if self.active[o] && o != keep && o != drop {
                        let d = self.dist[keep][o].max(self.dist[drop][o]);
                        self.dist[keep][o] = d;
                        self.dist[o][keep] = d;
                    }
                }
            }
        }
        self.sizes[keep] = total;
        let mut moved = std::mem::take(&mut self.members[drop]);
        self.members[keep].append(&mut moved);
        self.active[drop] = false;
        self.nn[drop] = None;
        let new_id = self.next_id;
        self.ids[keep] = new_id;
        self.next_id += 1;

        // Refresh neighbour caches: a slot is stale if its neighbour was one
        // of the merged slots; otherwise the new cluster can only improve it.
        self.nn[keep] = self.scan_nn(keep);
        for slot in 0..self.active.len() {
            if !self.active[slot] || slot == keep {
                continue;
            }
            match self.nn[slot] {
                Some((_, o)) if o == keep || o == drop => self.nn[slot] = self.scan_nn(slot),
                Some((c, _)) => {
                    let candidate = self.pair_key(slot, keep);
                    if candidate.0 < c {
                        self.nn[slot] = Some((candidate.0, keep));
                    }
                }
                None => self.nn[slot] = self.scan_nn(slot),
            }
        }

        Merge {
            a: id_a,
            b: id_b,
            cost,
            new_id,
        }
    }

    fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Labels rows by active cluster, ordered by cluster id.
    fn labels(&self, n_rows: usize) -> Vec<u8> {
        let mut slots: Vec<usize> = (0..self.active.len()).filter(|&s| self.active[s]).collect();
        slots.sort_by_key(|&s| self.ids[s]);
        let mut labels = vec![0u8; n_rows];
        for (cluster, &slot) in slots.iter().enumerate() {
            for &row in &self.members[slot] {
                labels[row as usize] = cluster as u8;
            }
        }
        labels
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// Full dendrogram: the n-1 merges in greedy order.
pub fn merge_sequence(points: &Array2<f64>, linkage: Linkage) -> Result<Vec<Merge>> {
    if points.nrows() < 2 {
        return Err(Error::Config(format!(
            "hierarchical: need at least 2 points, got {}",
            points.nrows()
        )));
    }
    let mut state = Agglomerator::new(points, None, linkage);
    state.init_nn();
    let mut merges = Vec::with_capacity(points.nrows() - 1);
    while state.active_count() > 1 {
        merges.push(state.merge_step());
    }
    Ok(merges)
}

/// Agglomerative clustering down to `k` clusters.
pub fn hierarchical(points: &Array2<f64>, k: usize, linkage: Linkage) -> Result<ClusterResult> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::Config(format!("hierarchical: need at least 2 points, got {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("hierarchical: invalid k={k} for n={n}")));
    }
    let mut state = Agglomerator::new(points, None, linkage);
    state.init_nn();
    let mut last_cost = 0.0;
    while state.active_count() > k {
        last_cost = state.merge_step().cost;
    }
    Ok(ClusterResult {
        labels: state.labels(n),
        method: format!("hierarchical-{linkage:?}").to_lowercase(),
        summary: ClusterSummary::FinalMergeCost(last_cost),
        seed: 0,
        degenerate: false,
    })
}

/// Ward clustering of weighted points (used for BIRCH's global phase, where
/// each point is a subcluster centroid carrying its member count).
pub(crate) fn ward_weighted(points: &Array2<f64>, weights: &[f64], k: usize) -> Result<Vec<u8>> {
    let n = points.nrows();
    if n == 0 || weights.len() != n {
        return Err(Error::Config("ward_weighted: empty input or weight mismatch".into()));
    }
    if n <= k {
        return Ok((0..n).map(|i| i as u8).collect());
    }
    let mut state = Agglomerator::new(points, Some(weights), Linkage::Ward);
    state.init_nn();
    while state.active_count() > k {
        state.merge_step();
    }
    Ok(state.labels(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_masses_match_kmeans_partition() {
        let pts = array![[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]];
        for linkage in [Linkage::Ward, Linkage::Average, Linkage::Complete] {
            let r = hierarchical(&pts, 2, linkage).unwrap();
            assert_eq!(r.labels[0], r.labels[1], "{linkage:?}");
            assert_eq!(r.labels[2], r.labels[3]);
            assert_ne!(r.labels[0], r.labels[2]);
        }
    }

    #[test]
    fn collinear_tie_breaks_to_lowest_pair() {
        // Points at 0, 1, 2: the (0,1) and (1,2) merges cost the same; the
        // tie rule picks (0,1) first.
        let pts = array![[0.0], [1.0], [2.0]];
        let merges = merge_sequence(&pts, Linkage::Ward).unwrap();
        assert_eq!((merges[0].a, merges[0].b), (0, 1));
        let r = hierarchical(&pts, 2, Linkage::Ward).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_ne!(r.labels[2], r.labels[0]);
    }

    #[test]
    fn single_point_errors() {
        let pts = array![[1.0]];
        assert!(hierarchical(&pts, 2, Linkage::Ward).is_err());
    }

    #[test]
    fn merge_ids_follow_dendrogram_convention() {
        let pts = array![[0.0], [0.1], [5.0], [5.1]];
        let merges = merge_sequence(&pts, Linkage::Ward).unwrap();
        assert_eq!(merges.len(), 3);
        assert_eq!(merges[0].new_id, 4);
        assert_eq!(merges[1].new_id, 5);
        assert_eq!(merges[2].new_id, 6);
        // Final merge joins the two pair-clusters.
        assert_eq!((merges[2].a, merges[2].b), (4, 5));
    }

    #[test]
    fn reorder_invariance_up_to_relabeling() {
        let pts = array![[0.0, 0.0], [0.2, 0.0], [4.0, 4.0], [4.2, 4.0], [9.0, 0.0], [9.2, 0.0]];
        let perm = [5usize, 2, 0, 3, 1, 4];
        let permuted = ndarray::Array2::from_shape_fn(pts.dim(), |(i, j)| pts[[perm[i], j]]);
        let a = hierarchical(&pts, 3, Linkage::Ward).unwrap().labels;
        let b = hierarchical(&permuted, 3, Linkage::Ward).unwrap().labels;
        // Same partition after undoing the permutation.
        for i in 0..perm.len() {
            for j in 0..perm.len() {
                assert_eq!(
                    a[perm[i]] == a[perm[j]],
                    b[i] == b[j],
                    "co-membership must be permutation invariant"
                );
            }
        }
    }
}
