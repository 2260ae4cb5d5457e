//! Proxy-label assignment from a two-cluster result.

use serde::{Deserialize, Serialize};

use super::ClusterResult;
use crate::error::{Error, Result};

/// Binary proxy labels for the favorable/unfavorable groups.
///
/// Orientation is a convention only — cluster 0 is the larger cluster — and
/// downstream metrics are invariant to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyLabels {
    pub labels: Vec<u8>,
    pub sizes: [usize; 2],
    pub method: String,
    pub seed: u64,
}

/// Canonicalizes a 2-cluster result into proxy labels.
pub fn assign_proxy(result: &ClusterResult) -> Result<ProxyLabels> {
    let mut counts = [0usize; 2];
    for &l in &result.labels {
        if l > 1 {
            return Err(Error::Schema(format!("assign_proxy: label {l} outside {{0,1}}")));
        }
        counts[l as usize] += 1;
    }
    if result.degenerate || counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Degenerate(format!(
            "assign_proxy: method '{}' produced a single cluster; try another method or seed",
            result.method
        )));
    }
    let flip = counts[1] > counts[0];
    let labels: Vec<u8> = result
        .labels
        .iter()
        .map(|&l| if flip { 1 - l } else { l })
        .collect();
    let sizes = if flip { [counts[1], counts[0]] } else { counts };
    Ok(ProxyLabels {
        labels,
        sizes,
        method: result.method.clone(),
        seed: result.seed,
    })
}

/// Agreement between proxy labels and a reference binary vector, reported as
/// balanced accuracy maximized over label polarity (the proxy's orientation
/// is arbitrary).
pub fn balanced_agreement(proxy: &[u8], reference: &[u8]) -> Result<f64> {
    if proxy.len() != reference.len() || proxy.is_empty() {
        return Err(Error::shape(
            "balanced_agreement",
            format!("{}", proxy.len()),
            format!("{}", reference.len()),
        ));
    }
    let mut hits = [[0usize; 2]; 2]; // [reference][proxy]
    let mut totals = [0usize; 2];
    for (&p, &r) in proxy.iter().zip(reference.iter()) {
        hits[r as usize][p as usize] += 1;
        totals[r as usize] += 1;
    }
    if totals[0] == 0 || totals[1] == 0 {
        return Err(Error::Undefined("balanced_agreement: reference has one class".into()));
    }
    let direct = (hits[0][0] as f64 / totals[0] as f64 + hits[1][1] as f64 / totals[1] as f64) / 2.0;
    let flipped = (hits[0][1] as f64 / totals[0] as f64 + hits[1][0] as f64 / totals[1] as f64) / 2.0;
    Ok(direct.max(flipped))
}
