//! Synthetic tables with planted group structure.
//!
//! Oracle datasets for the pipeline's core hypothesis: when non-sensitive
//! features correlate with a hidden group, the group is recoverable from
//! feature space. `corr_strength` dials that correlation from none (0) to
//! strong (1); labels are biased toward group 0 so mitigation has something
//! to mitigate.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::encode::{BlockKind, EncodedTable, FeatureBlock, FeatureLayout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    /// In [0, 1]: how strongly features shift with the hidden group.
    pub corr_strength: f64,
    /// Per-dimension mean shift at full correlation.
    pub shift: f64,
    /// Feature dimensionality.
    pub dims: usize,
    /// Intercept of the label model for group 0 (the favored group).
    pub bias_favored: f64,
    /// Intercept of the label model for group 1.
    pub bias_unfavored: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(n: usize, corr_strength: f64, seed: u64) -> Self {
        SyntheticConfig {
            n,
            corr_strength,
            shift: 1.25,
            dims: 6,
            bias_favored: 0.5,
            bias_unfavored: -1.5,
            seed,
        }
    }
}

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates a table whose hidden group G is stored as the sensitive column.
///
/// Features are group-shifted Gaussians; labels follow a logistic model on
/// the features with a group-dependent intercept, so predictions inherit the
/// group bias exactly when the features carry group information.
pub fn make_synthetic(n: usize, corr_strength: f64, seed: u64) -> Result<EncodedTable> {
    make_synthetic_with(SyntheticConfig::new(n, corr_strength, seed))
}

pub fn make_synthetic_with(cfg: SyntheticConfig) -> Result<EncodedTable> {
    if cfg.n == 0 {
        return Err(Error::Config("synthetic table needs n > 0".into()));
    }
    if !(0.0..=1.0).contains(&cfg.corr_strength) {
        return Err(Error::Config(format!(
            "corr_strength must be in [0, 1], got {}",
            cfg.corr_strength
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dims;
    let mut x = Array2::zeros((cfg.n, d));
    let mut s = vec![0u8; cfg.n];
    let mut y = vec![0u8; cfg.n];
    let norm = (d as f64).sqrt();
    for r in 0..cfg.n {
        let g = u8::from(rng.gen_bool(0.5));
        s[r] = g;
        let shift = cfg.corr_strength * cfg.shift * if g == 0 { 1.0 } else { -1.0 };
        let mut proj = 0.0;
        for c in 0..d {
            let v = sample_standard_normal(&mut rng) + shift;
            x[[r, c]] = v;
            proj += v;
        }
        proj /= norm;
        let bias = if g == 0 { cfg.bias_favored } else { cfg.bias_unfavored };
        let p = 1.0 / (1.0 + (-(1.5 * proj + bias)).exp());
        y[r] = u8::from(rng.gen_bool(p));
    }
    let layout = FeatureLayout {
        blocks: (0..d)
            .map(|c| FeatureBlock {
                column: format!("f{c}"),
                start: c,
                width: 1,
                kind: BlockKind::Continuous { mean: 0.0, std: 1.0 },
            })
            .collect(),
    };
    Ok(EncodedTable {
        x,
        y,
        s,
        ids: (0..cfg.n as u64).collect(),
        layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic(200, 0.5, 7).unwrap();
        let b = make_synthetic(200, 0.5, 7).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.s, b.s);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(make_synthetic(0, 0.5, 1).is_err());
        assert!(make_synthetic(10, 1.5, 1).is_err());
    }

    #[test]
    fn labels_favor_group_zero() {
        let t = make_synthetic(20_000, 1.0, 3).unwrap();
        let rate = |g: u8| {
            let (mut pos, mut tot) = (0usize, 0usize);
            for i in 0..t.n_rows() {
                if t.s[i] == g {
                    tot += 1;
                    pos += t.y[i] as usize;
                }
            }
            pos as f64 / tot as f64
        };
        assert!(rate(0) > rate(1) + 0.2, "rates: {} vs {}", rate(0), rate(1));
    }

    #[test]
    fn zero_correlation_leaves_features_uninformative() {
        let t = make_synthetic(20_000, 0.0, 11).unwrap();
        // Group-conditional feature means should coincide.
        for c in 0..t.width() {
            let mut sums = [0.0f64; 2];
            let mut counts = [0usize; 2];
            for r in 0..t.n_rows() {
                sums[t.s[r] as usize] += t.x[[r, c]];
                counts[t.s[r] as usize] += 1;
            }
            let gap = (sums[0] / counts[0] as f64 - sums[1] / counts[1] as f64).abs();
            assert!(gap < 0.05, "column {c} gap {gap}");
        }
    }
}
