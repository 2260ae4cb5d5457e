//! Stage two: partition embeddings into two clusters that act as proxy
//! favorable/unfavorable groups.

mod birch;
mod hierarchical;
mod kmeans;
mod proxy;

pub use birch::{birch, birch_with, build_cf_tree, BirchConfig, Cf, CfTree};
pub use hierarchical::{hierarchical, merge_sequence, Linkage, Merge};
pub use kmeans::kmeans;
pub use proxy::{assign_proxy, balanced_agreement, ProxyLabels};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Output of any clustering method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<u8>,
    pub method: String,
    pub summary: ClusterSummary,
    pub seed: u64,
    /// Set when fewer distinct clusters than requested were produced.
    pub degenerate: bool,
}

/// Method-specific quality summary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSummary {
    Inertia(f64),
    FinalMergeCost(f64),
    CfTree { leaf_entries: usize, threshold: f64 },
}

/// Z-scores each column in place; constant columns are left centered.
/// Distance-based clustering needs comparable scales across dimensions.
pub fn standardize(points: &mut Array2<f64>) {
    let n = points.nrows() as f64;
    if n == 0.0 {
        return;
    }
    for mut col in points.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
        col.mapv_inplace(|v| (v - mean) / std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardize_centers_and_scales() {
        let mut m = array![[1.0, 10.0], [3.0, 10.0], [5.0, 10.0]];
        standardize(&mut m);
        for c in 0..2 {
            let mean: f64 = m.column(c).sum() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
        // Constant column stays finite.
        assert!(m.column(1).iter().all(|v| v.is_finite()));
    }
}
