//! Lloyd's algorithm with k-means++ seeding and restarts.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClusterResult, ClusterSummary};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 300;

fn dist2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centroid uniform, then D^2 sampling.
fn seed_centroids(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist2(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining mass at distance zero: take the first index not
            // already chosen.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(dist2(points.row(i), points.row(next)));
        }
    }
    chosen
}

fn assign(points: &Array2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> bool {
    let mut changed = false;
    for i in 0..points.nrows() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.nrows() {
            let d = dist2(points.row(i), centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
    }
    changed
}

fn inertia(points: &Array2<f64>, centroids: &Array2<f64>, labels: &[usize]) -> f64 {
    (0..points.nrows())
        .map(|i| dist2(points.row(i), centroids.row(labels[i])))
        .sum()
}

fn lloyd(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.nrows();
    let d = points.ncols();
    let seeds = seed_centroids(points, k, rng);
    let mut centroids = Array2::zeros((k, d));
    for (c, &i) in seeds.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let changed = assign(points, &centroids, &mut labels);
        if !changed {
            break;
        }
        // Recompute centroids; an emptied cluster is reseeded from the point
        // farthest from its current centroid.
        let mut counts = vec![0usize; k];
        centroids.fill(0.0);
        for i in 0..n {
            counts[labels[i]] += 1;
            let mut row = centroids.row_mut(labels[i]);
            row += &points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centroids.row_mut(c);
                row /= counts[c] as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(points.row(a), centroids.row(labels[a]));
                        let db = dist2(points.row(b), centroids.row(labels[b]));
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .expect("n >= 1");
                if dist2(points.row(far), centroids.row(labels[far])) == 0.0 {
                    // All points coincide with their centroids; the cluster
                    // stays empty and the result is flagged degenerate.
                    continue;
                }
                centroids.row_mut(c).assign(&points.row(far));
            }
        }
    }
    let score = inertia(points, &centroids, &labels);
    (labels, score)
}

/// k-means with the best inertia over `restarts` seeded runs.
pub fn kmeans(points: &Array2<f64>, k: usize, restarts: usize, seed: u64) -> Result<ClusterResult> {
    let n = points.nrows();
    if n < k {
        return Err(Error::Config(format!("kmeans: {n} points for k={k}")));
    }
    if restarts == 0 {
        return Err(Error::Config("kmeans: restarts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts {
        let (labels, score) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(_, s)| score < *s) {
            best = Some((labels, score));
        }
    }
    let (labels, score) = best.expect("restarts >= 1");
    let distinct = {
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    Ok(ClusterResult {
        labels: labels.iter().map(|&l| l as u8).collect(),
        method: "kmeans".into(),
        summary: ClusterSummary::Inertia(score),
        seed,
        degenerate: distinct < k,
    })
}
