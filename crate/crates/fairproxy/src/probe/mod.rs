//! Linear probes over frozen embeddings.
//!
//! Three logistic probes trained on identical embedding inputs and splits —
//! predicting the proxy label, the true sensitive attribute, and the
//! downstream target — quantify what the embeddings encode. Probe weight
//! vectors are compared by cosine similarity (bias excluded; it carries no
//! direction). A small L2 penalty pins down a unique solution so cosines
//! measure geometry rather than optimizer noise.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::split;
use crate::error::{Error, Result};
use crate::nncore::{bce_grad, Adam, AdamConfig};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ProbeConfig {
    pub iters: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            iters: 400,
            learning_rate: 0.05,
            l2: 1e-4,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

/// A trained linear probe: w . h + b with sigmoid readout, positive class 1.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub w: Array1<f64>,
    pub b: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl LinearProbe {
    pub fn scores(&self, h: &Array2<f64>) -> Array1<f64> {
        (h.dot(&self.w) + self.b).mapv(|z| 1.0 / (1.0 + (-z).exp()))
    }
}

fn accuracy(scores: &Array1<f64>, y: &[u8], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let hits = rows
        .iter()
        .filter(|&&r| u8::from(scores[r] >= 0.5) == y[r])
        .count();
    hits as f64 / rows.len() as f64
}

/// Logistic regression by full-batch gradient descent on `train_rows`.
pub fn train_probe(
    embeddings: &Array2<f64>,
    labels: &[u8],
    train_rows: &[usize],
    test_rows: &[usize],
    cfg: &ProbeConfig,
) -> Result<LinearProbe> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::shape(
            "train_probe",
            format!("{} rows", embeddings.nrows()),
            format!("{} labels", labels.len()),
        ));
    }
    let classes: std::collections::BTreeSet<u8> = train_rows.iter().map(|&r| labels[r]).collect();
    if classes.len() < 2 {
        return Err(Error::Undefined("train_probe: single-class labels".into()));
    }
    let d = embeddings.ncols();
    let mut xt = Array2::zeros((train_rows.len(), d));
    let mut yt = Array1::zeros(train_rows.len());
    for (i, &r) in train_rows.iter().enumerate() {
        xt.row_mut(i).assign(&embeddings.row(r));
        yt[i] = labels[r] as f64;
    }

    // Zero init is a deterministic, convex starting point.
    let mut w = Array2::zeros((d, 1));
    let mut b = Array2::zeros((1, 1));
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate));
    let names = vec!["probe.w".to_string(), "probe.b".to_string()];
    for _ in 0..cfg.iters {
        let z: Array1<f64> = xt.dot(&w.column(0)) + b[[0, 0]];
        let s = z.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let (_, d_z) = bce_grad(&s.view(), &yt.view())?;
        let mut d_w = Array2::zeros((d, 1));
        for (i, &dz) in d_z.iter().enumerate() {
            for j in 0..d {
                d_w[[j, 0]] += dz * xt[[i, j]];
            }
        }
        // L2 on the weights only.
        d_w.zip_mut_with(&w, |g, &wi| *g += cfg.l2 * wi);
        let d_b = Array2::from_elem((1, 1), d_z.sum());
        opt.step(&mut [&mut w, &mut b], &[d_w, d_b], &names)?;
    }
    let w1 = w.column(0).to_owned();
    let probe = LinearProbe {
        w: w1,
        b: b[[0, 0]],
        train_accuracy: 0.0,
        test_accuracy: 0.0,
    };
    let scores = probe.scores(embeddings);
    Ok(LinearProbe {
        train_accuracy: accuracy(&scores, labels, train_rows),
        test_accuracy: accuracy(&scores, labels, test_rows),
        ..probe
    })
}

/// Cosine similarity between weight vectors, bias excluded.
pub fn cosine(w1: &Array1<f64>, w2: &Array1<f64>) -> Result<f64> {
    if w1.len() != w2.len() {
        return Err(Error::shape("cosine", format!("{}", w1.len()), format!("{}", w2.len())));
    }
    let n1 = w1.dot(w1).sqrt();
    let n2 = w2.dot(w2).sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Undefined("cosine: zero vector".into()));
    }
    Ok(w1.dot(w2) / (n1 * n2))
}

/// The three probes plus their weight-cosine comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub cos_proxy_true: f64,
    pub cos_proxy_downstream: f64,
    pub proxy_accuracy: f64,
    pub true_accuracy: f64,
    pub downstream_accuracy: f64,
}

/// Trains C_proxy, C_true and C_downstream on a shared split and compares
/// C_proxy's weights to the other two.
pub fn analyze(
    embeddings: &Array2<f64>,
    proxy: &[u8],
    sensitive: &[u8],
    downstream: &[u8],
    cfg: &ProbeConfig,
) -> Result<SimilarityReport> {
    let n = embeddings.nrows();
    if proxy.len() != n || sensitive.len() != n || downstream.len() != n {
        return Err(Error::shape(
            "analyze",
            format!("{n} rows"),
            format!("{} / {} / {}", proxy.len(), sensitive.len(), downstream.len()),
        ));
    }
    let split = split(n, cfg.test_frac, cfg.seed)?;
    let c_proxy = train_probe(embeddings, proxy, &split.train, &split.test, cfg)?;
    let c_true = train_probe(embeddings, sensitive, &split.train, &split.test, cfg)?;
    let c_down = train_probe(embeddings, downstream, &split.train, &split.test, cfg)?;
    Ok(SimilarityReport {
        cos_proxy_true: cosine(&c_proxy.w, &c_true.w)?,
        cos_proxy_downstream: cosine(&c_proxy.w, &c_down.w)?,
        proxy_accuracy: c_proxy.test_accuracy,
        true_accuracy: c_true.test_accuracy,
        downstream_accuracy: c_down.test_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = Array2::zeros((n, d));
        let mut y = vec![0u8; n];
        for i in 0..n {
            let cls = rng.gen_bool(0.5);
            y[i] = u8::from(cls);
            for j in 0..d {
                h[[i, j]] = rng.gen_range(-0.5..0.5) + if cls && j == 0 { 3.0 } else { 0.0 };
            }
        }
        (h, y)
    }

    #[test]
    fn separable_labels_reach_high_accuracy() {
        let (h, y) = separable(300, 4, 1);
        let rows: Vec<usize> = (0..300).collect();
        let probe = train_probe(&h, &y, &rows[..240], &rows[240..], &ProbeConfig::default()).unwrap();
        assert!(probe.train_accuracy >= 0.99, "train acc {}", probe.train_accuracy);
    }

    #[test]
    fn random_labels_sit_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Array2::from_shape_fn((600, 6), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<u8> = (0..600).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let rows: Vec<usize> = (0..600).collect();
        let probe = train_probe(&h, &y, &rows[..480], &rows[480..], &ProbeConfig::default()).unwrap();
        assert!(
            (probe.test_accuracy - 0.5).abs() <= 0.12,
            "test acc {}",
            probe.test_accuracy
        );
    }

    #[test]
    fn identical_runs_identical_weights() {
        let (h, y) = separable(120, 3, 5);
        let rows: Vec<usize> = (0..120).collect();
        let a = train_probe(&h, &y, &rows[..100], &rows[100..], &ProbeConfig::default()).unwrap();
        let b = train_probe(&h, &y, &rows[..100], &rows[100..], &ProbeConfig::default()).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
    }

    #[test]
    fn single_class_errors() {
        let (h, _) = separable(50, 3, 6);
        let y = vec![1u8; 50];
        let rows: Vec<usize> = (0..50).collect();
        assert!(train_probe(&h, &y, &rows[..40], &rows[40..], &ProbeConfig::default()).is_err());
    }

    #[test]
    fn cosine_basics() {
        let a = array![1.0, 2.0, -1.0];
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = array![2.0, -1.0, 0.0];
        assert!(cosine(&a, &b).unwrap().abs() < 1e-12);
        assert!(cosine(&a, &Array1::zeros(3)).is_err());
        // Scale invariance.
        let c = array![0.3, 0.4, 0.5];
        assert!((cosine(&a, &c).unwrap() - cosine(&(a.clone() * 7.0), &c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identical_tasks_have_cosine_near_one() {
        let (h, y) = separable(400, 5, 7);
        let report = analyze(&h, &y, &y, &y, &ProbeConfig::default()).unwrap();
        assert!(report.cos_proxy_true > 0.95, "cos {}", report.cos_proxy_true);
        assert!(report.cos_proxy_downstream > 0.95);
    }

    #[test]
    fn unrelated_tasks_have_low_cosine() {
        // Proxy aligned with dim 0, downstream with dim 1: orthogonal tasks.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 800;
        let mut h = Array2::zeros((n, 6));
        let mut proxy = vec![0u8; n];
        let mut down = vec![0u8; n];
        for i in 0..n {
            let a = rng.gen_bool(0.5);
            let b = rng.gen_bool(0.5);
            proxy[i] = u8::from(a);
            down[i] = u8::from(b);
            for j in 0..6 {
                h[[i, j]] = rng.gen_range(-0.5..0.5);
            }
            h[[i, 0]] += if a { 2.0 } else { -2.0 };
            h[[i, 1]] += if b { 2.0 } else { -2.0 };
        }
        let report = analyze(&h, &proxy, &proxy, &down, &ProbeConfig::default()).unwrap();
        assert!(report.cos_proxy_true > 0.9);
        assert!(report.cos_proxy_downstream.abs() < 0.2, "cos {}", report.cos_proxy_downstream);
    }
}
