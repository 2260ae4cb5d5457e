//! Deterministic random train/test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row positions of an unstratified random split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitIndex {
    pub fn n_rows(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

/// Splits `0..n` into train/test deterministically for a given seed.
pub fn split(n: usize, test_frac: f64, seed: u64) -> Result<SplitIndex> {
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} rows")));
    }
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {test_frac}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n - 1);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    // Sorted indices keep downstream slicing cache-friendly; the seed fully
    // determines membership either way.
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndex { train, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn eighty_twenty_on_ten_rows() {
        let s = split(10, 0.2, 1).unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.test.len(), 2);
    }

    #[test]
    fn same_seed_is_identical() {
        assert_eq!(split(100, 0.2, 42).unwrap(), split(100, 0.2, 42).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let a = split(1000, 0.2, 1).unwrap();
        let b = split(1000, 0.2, 2).unwrap();
        assert_ne!(a.test, b.test);
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let s = split(57, 0.33, 9).unwrap();
        let train: HashSet<_> = s.train.iter().collect();
        let test: HashSet<_> = s.test.iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 57);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(split(1, 0.2, 0).is_err());
        assert!(split(10, 0.0, 0).is_err());
        assert!(split(10, 1.0, 0).is_err());
    }
}
