//! The KL separation head.
//!
//! A small MLP over embeddings produces a 2-class distribution; the loss is
//! the KL divergence between that distribution and the downstream label
//! marginal, identical for every row. Minimizing it drives per-row outputs
//! toward the uninformative marginal, penalizing embeddings that let the MLP
//! separate downstream classes.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{loss_kl, Activation, Dense, Init, PROB_EPS};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SeparationConfig {
    /// Weight of the separation term in the training objective.
    pub beta: f64,
    pub hidden: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig { beta: 0.1, hidden: 16 }
    }
}

/// MLP over embeddings producing a 2-class probability vector, plus the
/// constant target distribution.
#[derive(Debug, Clone)]
pub struct SeparationHead {
    pub l1: Dense,
    pub l2: Dense,
    /// target[c] = P(Y = c) over the training labels.
    pub target: Array1<f64>,
}

/// Class-marginal distribution of binary labels.
pub fn class_marginal(y: &[u8]) -> Result<Array1<f64>> {
    if y.is_empty() {
        return Err(Error::Config("separation: empty label vector".into()));
    }
    let mut counts = [0usize; 2];
    for &v in y {
        if v > 1 {
            return Err(Error::Schema(format!("separation: label {v} outside {{0,1}}")));
        }
        counts[v as usize] += 1;
    }
    let n = y.len() as f64;
    Ok(Array1::from(vec![
        (counts[0] as f64 / n).max(PROB_EPS),
        (counts[1] as f64 / n).max(PROB_EPS),
    ]))
}

impl SeparationHead {
    pub fn new(input_dim: usize, cfg: &SeparationConfig, y: &[u8], rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(SeparationHead {
            l1: Dense::new(input_dim, cfg.hidden, Init::Xavier, rng),
            l2: Dense::new(cfg.hidden, 2, Init::Xavier, rng),
            target: class_marginal(y)?,
        })
    }

    /// Forward pass; returns (hidden activation, probabilities).
    pub fn forward(&self, h: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let a1 = Activation::Relu.apply(&self.l1.forward(h)?);
        let p = Activation::Softmax.apply(&self.l2.forward(&a1)?);
        Ok((a1, p))
    }

    /// Mean KL(p_row || target) over rows.
    pub fn loss(&self, p: &Array2<f64>) -> Result<f64> {
        let mut total = 0.0;
        for row in p.rows() {
            total += loss_kl(&row, &self.target.view())?;
        }
        Ok(total / p.nrows() as f64)
    }

    /// Backward pass. Returns (dL/dh, [dW1, db1, dW2, db2]) for the mean-KL
    /// loss, unscaled by beta.
    pub fn backward(
        &self,
        h: &Array2<f64>,
        a1: &Array2<f64>,
        p: &Array2<f64>,
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let n = p.nrows() as f64;
        // dKL/dp = ln(p / target) + 1, averaged over rows.
        let mut d_p = p.clone();
        for mut row in d_p.rows_mut() {
            for (v, &t) in row.iter_mut().zip(self.target.iter()) {
                *v = ((v.max(PROB_EPS) / t).ln() + 1.0) / n;
            }
        }
        let d_z2 = Activation::Softmax.grad_through(p, &d_p);
        let (d_a1, d_w2, d_b2) = self.l2.backward(a1, &d_z2);
        let d_z1 = Activation::Relu.grad_through(a1, &d_a1);
        let (d_h, d_w1, d_b1) = self.l1.backward(h, &d_z1);
        (d_h, vec![d_w1, d_b1, d_w2, d_b2])
    }

    pub fn param_names(prefix: &str) -> Vec<String> {
        ["sep.w1", "sep.b1", "sep.w2", "sep.b2"]
            .iter()
            .map(|n| format!("{prefix}{n}"))
            .collect()
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.l1.w, &self.l1.b, &self.l2.w, &self.l2.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.l1.w, &mut self.l1.b, &mut self.l2.w, &mut self.l2.b]
    }
}

/// The separation objective: mean KL between the head's output distribution
/// and the class marginal of `y`.
pub fn separation_loss(head: &SeparationHead, h: &Array2<f64>, y: &[u8]) -> Result<f64> {
    let marginal = class_marginal(y)?;
    if (&marginal - &head.target).iter().any(|d| d.abs() > 1e-9) {
        return Err(Error::Config(
            "separation_loss: labels disagree with the head's fitted marginal".into(),
        ));
    }
    let (_, p) = head.forward(h)?;
    head.loss(&p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn head_with_fixed_output(p: [f64; 2], target: [f64; 2], dim: usize) -> SeparationHead {
        // Zero first layer, bias-only logits in the second layer produce a
        // constant output distribution regardless of input.
        let mut l2 = Dense {
            w: Array2::zeros((4, 2)),
            b: Array2::zeros((1, 2)),
        };
        l2.b[[0, 0]] = p[0].ln();
        l2.b[[0, 1]] = p[1].ln();
        SeparationHead {
            l1: Dense {
                w: Array2::zeros((dim, 4)),
                b: Array2::zeros((1, 4)),
            },
            l2,
            target: Array1::from(target.to_vec()),
        }
    }

    #[test]
    fn marginal_output_gives_zero_loss() {
        let head = head_with_fixed_output([0.24, 0.76], [0.24, 0.76], 3);
        let h = array![[0.5, -0.5, 1.0], [2.0, 0.0, -1.0]];
        let y = vec![0u8; 24].into_iter().chain(vec![1u8; 76]).collect::<Vec<_>>();
        let loss = separation_loss(&head, &h, &y).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn hand_value_against_adult_marginal() {
        // KL([0.9, 0.1] || [0.24, 0.76]) in nats.
        let head = head_with_fixed_output([0.9, 0.1], [0.24, 0.76], 2);
        let h = array![[1.0, 1.0]];
        let y: Vec<u8> = vec![0u8; 24].into_iter().chain(vec![1u8; 76]).collect();
        let loss = separation_loss(&head, &h, &y).unwrap();
        let expected = 0.9 * (0.9_f64 / 0.24).ln() + 0.1 * (0.1_f64 / 0.76).ln();
        assert!((loss - expected).abs() < 1e-9);
        assert!((loss - 0.987).abs() < 1e-3, "loss {loss}");
    }

    #[test]
    fn invalid_labels_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = SeparationHead::new(3, &SeparationConfig::default(), &[0, 1], &mut rng).unwrap();
        let h = array![[0.0, 0.0, 0.0]];
        assert!(separation_loss(&head, &h, &[0, 2]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = [0u8, 1, 1, 0, 1];
        let mut head = SeparationHead::new(3, &SeparationConfig::default(), &y, &mut rng).unwrap();
        let h = array![[0.3, -0.2, 0.8], [1.0, 0.4, -0.6]];

        let (a1, p) = head.forward(&h).unwrap();
        let (_, grads) = head.backward(&h, &a1, &p);

        let eps = 1e-6;
        for (pi, gname) in [(0usize, "w1"), (2, "w2")] {
            let g = grads[pi].clone();
            for i in 0..g.nrows().min(3) {
                for j in 0..g.ncols().min(2) {
                    let orig = head.params()[pi][[i, j]];
                    head.params_mut()[pi][[i, j]] = orig + eps;
                    let (_, p1) = head.forward(&h).unwrap();
                    let lp = head.loss(&p1).unwrap();
                    head.params_mut()[pi][[i, j]] = orig - eps;
                    let (_, p2) = head.forward(&h).unwrap();
                    let lm = head.loss(&p2).unwrap();
                    head.params_mut()[pi][[i, j]] = orig;
                    let fd = (lp - lm) / (2.0 * eps);
                    assert!(
                        (fd - g[[i, j]]).abs() < 1e-6,
                        "{gname}[{i},{j}]: fd {fd} vs {}",
                        g[[i, j]]
                    );
                }
            }
        }
    }
}
