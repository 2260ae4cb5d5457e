//! Loss functions and their gradients.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to at least this value before any log.
pub const PROB_EPS: f64 = 1e-12;

/// Reconstruction loss flavor. Mean squared error is the default; mean
/// absolute error is available for configurations that want the L1 form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMode {
    Mse,
    Mae,
}

fn check_same_shape(op: &'static str, x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::shape(
            op,
            format!("{:?}", x.dim()),
            format!("{:?}", y.dim()),
        ));
    }
    Ok(())
}

/// Mean reconstruction error over all entries.
pub fn loss_reconstruction(x: &Array2<f64>, x_hat: &Array2<f64>, mode: ReconMode) -> Result<f64> {
    check_same_shape("loss_reconstruction", x, x_hat)?;
    let n = x.len() as f64;
    let total: f64 = x
        .iter()
        .zip(x_hat.iter())
        .map(|(&a, &b)| match mode {
            ReconMode::Mse => (a - b) * (a - b),
            ReconMode::Mae => (a - b).abs(),
        })
        .sum();
    Ok(total / n)
}

/// Reconstruction loss plus its gradient with respect to `x_hat`.
pub fn loss_reconstruction_grad(
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
    mode: ReconMode,
) -> Result<(f64, Array2<f64>)> {
    let loss = loss_reconstruction(x, x_hat, mode)?;
    let n = x.len() as f64;
    let mut grad = x_hat.clone();
    grad.zip_mut_with(x, |h, &t| {
        *h = match mode {
            ReconMode::Mse => 2.0 * (*h - t) / n,
            ReconMode::Mae => (*h - t).signum() / n,
        }
    });
    Ok((loss, grad))
}

/// Cross entropy over masked rows only.
///
/// `p` holds one probability vector per position, `y_onehot` the matching
/// one-hot targets, and `mask` selects the positions the loss is computed on.
/// Unmasked positions contribute exactly zero. An empty mask yields 0.
pub fn loss_cross_entropy(p: &Array2<f64>, y_onehot: &Array2<f64>, mask: &[bool]) -> Result<f64> {
    check_same_shape("loss_cross_entropy", p, y_onehot)?;
    if mask.len() != p.nrows() {
        return Err(Error::shape(
            "loss_cross_entropy",
            format!("mask length {}", p.nrows()),
            format!("{}", mask.len()),
        ));
    }
    let n_masked = mask.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        log::warn!("loss_cross_entropy: empty mask, loss is vacuously 0");
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, masked) in mask.iter().enumerate() {
        if !masked {
            continue;
        }
        for (pi, yi) in p.row(i).iter().zip(y_onehot.row(i).iter()) {
            if *yi != 0.0 {
                total -= yi * pi.max(PROB_EPS).ln();
            }
        }
    }
    Ok(total / n_masked as f64)
}

/// Masked cross entropy plus its gradient with respect to `p`.
pub fn loss_cross_entropy_grad(
    p: &Array2<f64>,
    y_onehot: &Array2<f64>,
    mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    let loss = loss_cross_entropy(p, y_onehot, mask)?;
    let n_masked = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let mut grad = Array2::zeros(p.dim());
    for (i, masked) in mask.iter().enumerate() {
        if !masked {
            continue;
        }
        for j in 0..p.ncols() {
            let y = y_onehot[[i, j]];
            if y != 0.0 {
                grad[[i, j]] = -y / (p[[i, j]].max(PROB_EPS) * n_masked);
            }
        }
    }
    Ok((loss, grad))
}

fn check_distribution(op: &'static str, v: &ArrayView1<f64>) -> Result<()> {
    let sum: f64 = v.sum();
    if (sum - 1.0).abs() > 1e-6 || v.iter().any(|&x| x < 0.0) {
        return Err(Error::Numeric(format!(
            "{op}: input is not a probability vector (sum {sum:.9})"
        )));
    }
    Ok(())
}

/// KL(p || q) in nats. Zero q entries are clamped by [`PROB_EPS`].
pub fn loss_kl(p: &ArrayView1<f64>, q: &ArrayView1<f64>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("loss_kl", format!("{}", p.len()), format!("{}", q.len())));
    }
    check_distribution("loss_kl", p)?;
    check_distribution("loss_kl", q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            total += pi * (pi / qi.max(PROB_EPS)).ln();
        }
    }
    Ok(total)
}

/// KL(p || q) plus its gradient with respect to p: ln(p/q) + 1.
pub fn loss_kl_grad(p: &ArrayView1<f64>, q: &ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    let loss = loss_kl(p, q)?;
    let grad = Array1::from_shape_fn(p.len(), |i| {
        (p[i].max(PROB_EPS) / q[i].max(PROB_EPS)).ln() + 1.0
    });
    Ok((loss, grad))
}

/// Binary cross entropy over sigmoid scores in (0, 1).
pub fn bce(scores: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(Error::shape("bce", format!("{}", scores.len()), format!("{}", y.len())));
    }
    let n = scores.len() as f64;
    let total: f64 = scores
        .iter()
        .zip(y.iter())
        .map(|(&s, &t)| {
            let s = s.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
        })
        .sum();
    Ok(total / n)
}

/// BCE gradient with respect to the pre-sigmoid logits: (s - y) / n.
pub fn bce_grad(scores: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    let loss = bce(scores, y)?;
    let n = scores.len() as f64;
    let grad = Array1::from_shape_fn(scores.len(), |i| (scores[i] - y[i]) / n);
    Ok((loss, grad))
}

/// Numerically stable softmax of a single logit vector.
pub fn softmax_row(z: &ArrayView1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = z.mapv(|v| (v - m).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| (v / sum).max(PROB_EPS));
    let sum2 = out.sum();
    out.mapv_inplace(|v| v / sum2);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reconstruction_zero_when_exact() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(loss_reconstruction(&x, &x, ReconMode::Mse).unwrap(), 0.0);
        assert_eq!(loss_reconstruction(&x, &x, ReconMode::Mae).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_hand_cases() {
        let x = array![[1.0, 2.0]];
        let xh = array![[0.0, 0.0]];
        assert!((loss_reconstruction(&x, &xh, ReconMode::Mae).unwrap() - 1.5).abs() < 1e-12);
        assert!((loss_reconstruction(&x, &xh, ReconMode::Mse).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_shape_mismatch_errors() {
        let x = array![[1.0, 2.0]];
        let xh = array![[1.0], [2.0]];
        assert!(loss_reconstruction(&x, &xh, ReconMode::Mse).is_err());
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let y = p.clone();
        let mask = vec![true, true];
        assert_eq!(loss_cross_entropy(&p, &y, &mask).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_single_masked_field() {
        let p = array![[0.5, 0.5], [0.9, 0.1]];
        let y = array![[1.0, 0.0], [1.0, 0.0]];
        let mask = vec![true, false];
        let loss = loss_cross_entropy(&p, &y, &mask).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_empty_mask_is_zero() {
        let p = array![[0.5, 0.5]];
        let y = array![[1.0, 0.0]];
        assert_eq!(loss_cross_entropy(&p, &y, &[false]).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = array![[0.0, 1.0]];
        let y = array![[1.0, 0.0]];
        let loss = loss_cross_entropy(&p, &y, &[true]).unwrap();
        assert!(loss.is_finite());
        assert!(loss > 20.0);
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = array![0.3, 0.7];
        assert_eq!(loss_kl(&p.view(), &p.view()).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_case() {
        let p = array![0.9, 0.1];
        let q = array![0.5, 0.5];
        let expected = 0.9 * (1.8_f64).ln() + 0.1 * (0.2_f64).ln();
        let got = loss_kl(&p.view(), &q.view()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.3681).abs() < 1e-4);
    }

    #[test]
    fn kl_rejects_non_distribution() {
        let p = array![0.9, 0.3];
        let q = array![0.5, 0.5];
        assert!(loss_kl(&p.view(), &q.view()).is_err());
    }

    #[test]
    fn bce_grad_matches_logit_derivative() {
        let s = array![0.7, 0.2];
        let y = array![1.0, 0.0];
        let (_, g) = bce_grad(&s.view(), &y.view()).unwrap();
        assert!((g[0] - (0.7 - 1.0) / 2.0).abs() < 1e-12);
        assert!((g[1] - 0.2 / 2.0).abs() < 1e-12);
    }
}
