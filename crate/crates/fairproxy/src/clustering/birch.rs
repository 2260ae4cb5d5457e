//! BIRCH: clustering-feature tree construction plus a global Ward phase.
//!
//! Points are inserted one pass into a CF-tree (nearest-subcluster descent,
//! absorb while the merged radius stays under the threshold, split nodes on
//! overflow). If the leaf level grows past `max_subclusters`, the tree is
//! rebuilt from its leaf CFs with the threshold raised, as in the original
//! algorithm's memory-control loop. Leaf-subcluster centroids are then
//! merged agglomeratively (size-weighted Ward) down to k clusters and every
//! point is labeled through its subcluster.

use ndarray::Array2;

use super::hierarchical::ward_weighted;
use super::{ClusterResult, ClusterSummary};
use crate::error::{Error, Result};

/// A clustering feature: count, linear sum, and squared sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Cf {
    pub n: f64,
    pub ls: Vec<f64>,
    pub ss: f64,
}

impl Cf {
    pub fn from_point(p: &[f64]) -> Self {
        Cf {
            n: 1.0,
            ls: p.to_vec(),
            ss: p.iter().map(|v| v * v).sum(),
        }
    }

    pub fn add(&mut self, other: &Cf) {
        self.n += other.n;
        for (a, b) in self.ls.iter_mut().zip(&other.ls) {
            *a += b;
        }
        self.ss += other.ss;
    }

    pub fn merged(&self, other: &Cf) -> Cf {
        let mut out = self.clone();
        out.add(other);
        out
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.ls.iter().map(|v| v / self.n).collect()
    }

    /// Root-mean-square distance of members to the centroid.
    pub fn radius(&self) -> f64 {
        let c2: f64 = self.ls.iter().map(|v| (v / self.n) * (v / self.n)).sum();
        (self.ss / self.n - c2).max(0.0).sqrt()
    }

    fn centroid_dist2(&self, other: &Cf) -> f64 {
        self.ls
            .iter()
            .zip(&other.ls)
            .map(|(a, b)| {
                let d = a / self.n - b / other.n;
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
struct Subcluster {
    cf: Cf,
    id: usize,
}

#[derive(Debug, Clone)]
struct Child {
    cf: Cf,
    node: Box<Node>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { entries: Vec<Subcluster> },
    Internal { children: Vec<Child> },
}

impl Node {
    fn sum_cf(&self, dims: usize) -> Cf {
        let mut total = Cf {
            n: 0.0,
            ls: vec![0.0; dims],
            ss: 0.0,
        };
        match self {
            Node::Leaf { entries } => {
                for e in entries {
                    total.add(&e.cf);
                }
            }
            Node::Internal { children } => {
                for c in children {
                    total.add(&c.cf);
                }
            }
        }
        total
    }
}

enum Outcome {
    /// CF went into the subcluster with this id; no structural change.
    Placed(usize),
    /// Node split; the new sibling must be linked by the parent.
    Split(Child, usize),
}

/// A built CF-tree.
#[derive(Debug, Clone)]
pub struct CfTree {
    root: Node,
    dims: usize,
    pub threshold: f64,
    pub branching: usize,
    next_id: usize,
}

impl CfTree {
    fn new(threshold: f64, branching: usize, dims: usize) -> Self {
        CfTree {
            root: Node::Leaf { entries: Vec::new() },
            dims,
            threshold,
            branching,
            next_id: 0,
        }
    }

    /// Inserts a CF; returns the id of the subcluster that now holds it.
    fn insert(&mut self, cf: Cf) -> usize {
        let threshold = self.threshold;
        let branching = self.branching;
        let dims = self.dims;
        let mut next_id = self.next_id;
        let outcome = insert_rec(&mut self.root, cf, threshold, branching, dims, &mut next_id);
        self.next_id = next_id;
        match outcome {
            Outcome::Placed(id) => id,
            Outcome::Split(sibling, id) => {
                let old_root = std::mem::replace(&mut self.root, Node::Leaf { entries: Vec::new() });
                let left = Child {
                    cf: old_root.sum_cf(dims),
                    node: Box::new(old_root),
                };
                self.root = Node::Internal {
                    children: vec![left, sibling],
                };
                id
            }
        }
    }

    /// Leaf subclusters in traversal order.
    pub fn leaf_subclusters(&self) -> Vec<(usize, Cf)> {
        fn walk(node: &Node, out: &mut Vec<(usize, Cf)>) {
            match node {
                Node::Leaf { entries } => {
                    out.extend(entries.iter().map(|e| (e.id, e.cf.clone())))
                }
                Node::Internal { children } => {
                    for c in children {
                        walk(&c.node, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_subclusters().len()
    }

    /// Verifies the CF additivity law at every internal node: each child CF
    /// must equal the component-wise sum of the CFs below it.
    pub fn check_additivity(&self, tol: f64) -> bool {
        fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
        }
        fn walk(node: &Node, dims: usize, tol: f64) -> bool {
            if let Node::Internal { children } = node {
                for c in children {
                    let sum = c.node.sum_cf(dims);
                    if !close(c.cf.n, sum.n, tol)
                        || !close(c.cf.ss, sum.ss, tol)
                        || c.cf.ls.iter().zip(&sum.ls).any(|(a, b)| !close(*a, *b, tol))
                    {
                        return false;
                    }
                    if !walk(&c.node, dims, tol) {
                        return false;
                    }
                }
            }
            true
        }
        walk(&self.root, self.dims, tol)
    }
}

fn insert_rec(
    node: &mut Node,
    cf: Cf,
    threshold: f64,
    branching: usize,
    dims: usize,
    next_id: &mut usize,
) -> Outcome {
    match node {
        Node::Leaf { entries } => {
            if let Some(nearest) = nearest_entry(entries, &cf) {
                let merged = entries[nearest].cf.merged(&cf);
                if merged.radius() <= threshold {
                    entries[nearest].cf = merged;
                    return Outcome::Placed(entries[nearest].id);
                }
            }
            let id = *next_id;
            *next_id += 1;
            entries.push(Subcluster { cf, id });
            if entries.len() <= branching {
                return Outcome::Placed(id);
            }
            // Overflow: split around the farthest pair of entries.
            let (sa, sb) = farthest_pair(entries.iter().map(|e| &e.cf));
            let drained: Vec<Subcluster> = std::mem::take(entries);
            let mut right = Vec::new();
            let (ca, cb) = (drained[sa].cf.clone(), drained[sb].cf.clone());
            for e in drained {
                if e.cf.centroid_dist2(&cb) < e.cf.centroid_dist2(&ca) {
                    right.push(e);
                } else {
                    entries.push(e);
                }
            }
            let sibling_node = Node::Leaf { entries: right };
            let sibling = Child {
                cf: sibling_node.sum_cf(dims),
                node: Box::new(sibling_node),
            };
            Outcome::Split(sibling, id)
        }
        Node::Internal { children } => {
            let pick = nearest_child(children, &cf);
            match insert_rec(&mut children[pick].node, cf.clone(), threshold, branching, dims, next_id) {
                Outcome::Placed(id) => {
                    children[pick].cf.add(&cf);
                    Outcome::Placed(id)
                }
                Outcome::Split(sibling, id) => {
                    children[pick].cf = children[pick].node.sum_cf(dims);
                    children.push(sibling);
                    if children.len() <= branching {
                        return Outcome::Placed(id);
                    }
                    let (sa, sb) = farthest_pair(children.iter().map(|c| &c.cf));
                    let drained: Vec<Child> = std::mem::take(children);
                    let mut right = Vec::new();
                    let (ca, cb) = (drained[sa].cf.clone(), drained[sb].cf.clone());
                    for c in drained {
                        if c.cf.centroid_dist2(&cb) < c.cf.centroid_dist2(&ca) {
                            right.push(c);
                        } else {
                            children.push(c);
                        }
                    }
                    let sibling_node = Node::Internal { children: right };
                    let sibling = Child {
                        cf: sibling_node.sum_cf(dims),
                        node: Box::new(sibling_node),
                    };
                    Outcome::Split(sibling, id)
                }
            }
        }
    }
}

fn nearest_entry(entries: &[Subcluster], cf: &Cf) -> Option<usize> {
    entries
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.cf.centroid_dist2(cf)
                .partial_cmp(&b.cf.centroid_dist2(cf))
                .expect("finite distances")
        })
        .map(|(i, _)| i)
}

fn nearest_child(children: &[Child], cf: &Cf) -> usize {
    children
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.cf.centroid_dist2(cf)
                .partial_cmp(&b.cf.centroid_dist2(cf))
                .expect("finite distances")
        })
        .map(|(i, _)| i)
        .expect("internal nodes are non-empty")
}

fn farthest_pair<'a>(cfs: impl Iterator<Item = &'a Cf>) -> (usize, usize) {
    let items: Vec<&Cf> = cfs.collect();
    let mut best = (0, 1);
    let mut best_d = -1.0;
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            let d = items[i].centroid_dist2(items[j]);
            if d > best_d {
                best_d = d;
                best = (i, j);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub struct BirchConfig {
    pub threshold: f64,
    pub branching: usize,
    /// Rebuild trigger: when the leaf level exceeds this, the threshold is
    /// raised by 50% and the tree rebuilt from its leaf CFs.
    pub max_subclusters: usize,
}

impl Default for BirchConfig {
    fn default() -> Self {
        BirchConfig {
            threshold: 0.5,
            branching: 50,
            max_subclusters: 2048,
        }
    }
}

/// Builds the CF-tree (with rebuilds) and returns it along with each point's
/// leaf-subcluster id.
pub fn build_cf_tree(points: &Array2<f64>, cfg: &BirchConfig) -> Result<(CfTree, Vec<usize>)> {
    if points.nrows() == 0 {
        return Err(Error::Config("birch: empty input".into()));
    }
    if cfg.threshold <= 0.0 {
        return Err(Error::Config(format!("birch: threshold must be > 0, got {}", cfg.threshold)));
    }
    if cfg.branching < 2 {
        return Err(Error::Config(format!("birch: branching must be >= 2, got {}", cfg.branching)));
    }
    let dims = points.ncols();
    let mut tree = CfTree::new(cfg.threshold, cfg.branching, dims);
    let mut point_sub: Vec<usize> = Vec::with_capacity(points.nrows());
    for row in points.rows() {
        let id = tree.insert(Cf::from_point(row.as_slice().expect("contiguous rows")));
        point_sub.push(id);
    }
    while tree.leaf_count() > cfg.max_subclusters {
        let old = tree.leaf_subclusters();
        let mut rebuilt = CfTree::new(tree.threshold * 1.5, cfg.branching, dims);
        let mut remap = vec![usize::MAX; tree.next_id];
        for (old_id, cf) in old {
            remap[old_id] = rebuilt.insert(cf);
        }
        for p in &mut point_sub {
            *p = remap[*p];
        }
        tree = rebuilt;
    }
    Ok((tree, point_sub))
}

/// BIRCH clustering to k clusters.
pub fn birch(points: &Array2<f64>, threshold: f64, branching: usize, k: usize) -> Result<ClusterResult> {
    let cfg = BirchConfig {
        threshold,
        branching,
        ..Default::default()
    };
    birch_with(points, &cfg, k).map(|(r, _)| r)
}

/// BIRCH clustering that also returns the constructed tree.
pub fn birch_with(points: &Array2<f64>, cfg: &BirchConfig, k: usize) -> Result<(ClusterResult, CfTree)> {
    let (tree, point_sub) = build_cf_tree(points, cfg)?;
    let subs = tree.leaf_subclusters();
    let n_sub = subs.len();
    let dims = points.ncols();
    let mut centroids = Array2::zeros((n_sub, dims));
    let mut weights = vec![0.0; n_sub];
    let mut index_of = vec![usize::MAX; tree.next_id];
    for (i, (id, cf)) in subs.iter().enumerate() {
        index_of[*id] = i;
        weights[i] = cf.n;
        for (j, v) in cf.centroid().into_iter().enumerate() {
            centroids[[i, j]] = v;
        }
    }
    let sub_labels: Vec<u8> = if n_sub == 1 {
        vec![0]
    } else {
        ward_weighted(&centroids, &weights, k)?
    };
    let labels: Vec<u8> = point_sub.iter().map(|&sid| sub_labels[index_of[sid]]).collect();
    let distinct = {
        let mut seen = [false; 256];
        for &l in &labels {
            seen[l as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    let result = ClusterResult {
        labels,
        method: "birch".into(),
        summary: ClusterSummary::CfTree {
            leaf_entries: n_sub,
            threshold: tree.threshold,
        },
        seed: 0,
        degenerate: distinct < k,
    };
    Ok((result, tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_point_cf_definition() {
        let p = [3.0, 4.0];
        let cf = Cf::from_point(&p);
        assert_eq!(cf.n, 1.0);
        assert_eq!(cf.ls, vec![3.0, 4.0]);
        assert_eq!(cf.ss, 25.0);
        assert_eq!(cf.radius(), 0.0);
    }

    #[test]
    fn cf_merge_is_additive() {
        let a = [
            Cf::from_point(&[1.0, 2.0]),
            Cf::from_point(&[3.0, -1.0]),
            Cf::from_point(&[0.5, 0.5]),
        ];
        let mut left = a[0].merged(&a[1]);
        left.add(&a[2]);
        let concat = {
            let mut c = Cf::from_point(&[1.0, 2.0]);
            c.add(&Cf::from_point(&[3.0, -1.0]));
            c.add(&Cf::from_point(&[0.5, 0.5]));
            c
        };
        assert_eq!(left.n, concat.n);
        assert_eq!(left.ss, concat.ss);
        assert_eq!(left.ls, concat.ls);
    }

    #[test]
    fn separates_two_masses_like_kmeans() {
        let pts = array![[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]];
        let r = birch(&pts, 0.5, 50, 2).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
    }

    #[test]
    fn additivity_holds_after_splits() {
        // Small branching forces plenty of node splits.
        let mut rows = Vec::new();
        let mut state = 1u64;
        for i in 0..400 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let jitter = (state >> 40) as f64 / (1u64 << 24) as f64;
            let center = if i % 2 == 0 { 0.0 } else { 8.0 };
            rows.push([center + jitter, center - jitter]);
        }
        let pts = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        let cfg = BirchConfig {
            threshold: 0.3,
            branching: 4,
            max_subclusters: 2048,
        };
        let (result, tree) = birch_with(&pts, &cfg, 2).unwrap();
        assert!(tree.check_additivity(1e-9));
        assert!(!result.degenerate);
    }

    #[test]
    fn rebuild_caps_leaf_entries() {
        let pts = Array2::from_shape_fn((300, 2), |(i, j)| (i * 7 % 97) as f64 + j as f64 * 0.1);
        let cfg = BirchConfig {
            threshold: 1e-6,
            branching: 8,
            max_subclusters: 32,
        };
        let (tree, point_sub) = build_cf_tree(&pts, &cfg).unwrap();
        assert!(tree.leaf_count() <= 32);
        assert!(tree.threshold > 1e-6);
        assert_eq!(point_sub.len(), 300);
        assert!(tree.check_additivity(1e-9));
    }

    #[test]
    fn rejects_bad_parameters() {
        let pts = array![[0.0, 0.0]];
        assert!(birch(&pts, 0.0, 50, 2).is_err());
        assert!(birch(&pts, 0.5, 1, 2).is_err());
    }
}
