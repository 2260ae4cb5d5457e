//! One-hidden-layer autoencoder trained on reconstruction.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::separation::{SeparationConfig, SeparationHead};
use crate::error::{Error, Result};
use crate::nncore::{
    derive_seed, loss_reconstruction_grad, Activation, Adam, AdamConfig, Dense, Init, ParamSet,
    ReconMode, TrainConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AeConfig {
    pub latent_dim: usize,
    /// Activation on the encoder output (input -> latent).
    pub f1: Activation,
    /// Activation on the decoder output (latent -> reconstruction).
    pub f2: Activation,
    pub recon: ReconMode,
    pub train: TrainConfig,
    pub separation: Option<SeparationConfig>,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            latent_dim: 32,
            f1: Activation::Tanh,
            f2: Activation::Relu,
            recon: ReconMode::Mse,
            train: TrainConfig {
                epochs: 200,
                batch_size: 32,
                learning_rate: 1e-3,
                seed: 0,
            },
            separation: None,
        }
    }
}

/// Encoder/decoder pair with its activations and training history.
#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    pub encoder: Dense,
    pub decoder: Dense,
    pub f1: Activation,
    pub f2: Activation,
    pub separation: Option<SeparationHead>,
    pub loss_curve: Vec<f64>,
    pub trained: bool,
}

impl AutoencoderModel {
    pub fn new(input_dim: usize, cfg: &AeConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.latent_dim >= input_dim {
            return Err(Error::Config(format!(
                "latent dim {} must be in (0, input dim {input_dim})",
                cfg.latent_dim
            )));
        }
        Ok(AutoencoderModel {
            encoder: Dense::new(input_dim, cfg.latent_dim, Init::Xavier, rng),
            decoder: Dense::new(cfg.latent_dim, input_dim, Init::Xavier, rng),
            f1: cfg.f1,
            f2: cfg.f2,
            separation: None,
            loss_curve: Vec::new(),
            trained: false,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Latent representation of each row.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.f1.apply(&self.encoder.forward(x)?))
    }
}

impl ParamSet for AutoencoderModel {
    fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "encoder.w".to_string(),
            "encoder.b".to_string(),
            "decoder.w".to_string(),
            "decoder.b".to_string(),
        ];
        if self.separation.is_some() {
            names.extend(SeparationHead::param_names("ae."));
        }
        names
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        let mut ps = vec![&self.encoder.w, &self.encoder.b, &self.decoder.w, &self.decoder.b];
        if let Some(head) = &self.separation {
            ps.extend(head.params());
        }
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut ps = vec![
            &mut self.encoder.w,
            &mut self.encoder.b,
            &mut self.decoder.w,
            &mut self.decoder.b,
        ];
        if let Some(head) = &mut self.separation {
            ps.extend(head.params_mut());
        }
        ps
    }
}

/// h = f1(We x + be), x_hat = f2(Wd h + bd).
pub fn ae_forward(model: &AutoencoderModel, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let h = model.encode(x)?;
    let x_hat = model.f2.apply(&model.decoder.forward(&h)?);
    Ok((h, x_hat))
}

/// One training step on a batch; returns the objective value and gradients
/// in parameter order.
fn ae_step(
    model: &AutoencoderModel,
    x: &Array2<f64>,
    recon: ReconMode,
    beta: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let z1 = model.encoder.forward(x)?;
    let h = model.f1.apply(&z1);
    let z2 = model.decoder.forward(&h)?;
    let x_hat = model.f2.apply(&z2);

    let (recon_loss, d_xhat) = loss_reconstruction_grad(x, &x_hat, recon)?;
    let d_z2 = model.f2.grad_through(&x_hat, &d_xhat);
    let (mut d_h, d_wd, d_bd) = model.decoder.backward(&h, &d_z2);

    let mut loss = recon_loss;
    let mut sep_grads = Vec::new();
    if let Some(head) = &model.separation {
        if beta != 0.0 {
            let (a1, p) = head.forward(&h)?;
            loss += beta * head.loss(&p)?;
            let (d_h_sep, grads) = head.backward(&h, &a1, &p);
            d_h.scaled_add(beta, &d_h_sep);
            sep_grads = grads.into_iter().map(|g| g * beta).collect();
        } else {
            sep_grads = head.params().iter().map(|p| Array2::zeros(p.dim())).collect();
        }
    }

    let d_z1 = model.f1.grad_through(&h, &d_h);
    let (_, d_we, d_be) = model.encoder.backward(x, &d_z1);

    let mut grads = vec![d_we, d_be, d_wd, d_bd];
    grads.extend(sep_grads);
    Ok((loss, grads))
}

/// Trains the autoencoder. When `labels` are supplied together with a
/// separation config, the KL separation term joins the objective.
pub fn train_autoencoder(
    x: &Array2<f64>,
    cfg: &AeConfig,
    labels: Option<&[u8]>,
) -> Result<AutoencoderModel> {
    cfg.train.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Config("train_autoencoder: empty input".into()));
    }
    let mut param_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "ae-params"));
    let mut model = AutoencoderModel::new(x.ncols(), cfg, &mut param_rng)?;
    // Start reconstruction at the column means. This keeps relu output units
    // alive from the first step; a unit whose pre-activation starts negative
    // on every row would otherwise receive no gradient at all.
    for (c, mut b) in model.decoder.b.columns_mut().into_iter().enumerate() {
        b[0] = x.column(c).sum() / n as f64;
    }
    let beta = match (&cfg.separation, labels) {
        (Some(sep), Some(y)) => {
            let mut sep_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "ae-separation"));
            model.separation = Some(SeparationHead::new(cfg.latent_dim, sep, y, &mut sep_rng)?);
            sep.beta
        }
        (Some(_), None) => {
            return Err(Error::Config(
                "train_autoencoder: separation requested but no labels supplied".into(),
            ))
        }
        _ => 0.0,
    };

    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "ae-batches"));
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.train.learning_rate));
    let names = model.param_names();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut batch_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.train.batch_size) {
            let xb = take_rows(x, chunk);
            let (loss, grads) = ae_step(&model, &xb, cfg.recon, beta)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "train_autoencoder diverged at epoch {epoch}"
                )));
            }
            opt.step(&mut model.params_mut(), &grads, &names)?;
            epoch_loss += loss;
            batches += 1;
        }
        model.loss_curve.push(epoch_loss / batches as f64);
    }
    model.trained = true;
    Ok(model)
}

pub(crate) fn take_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{grad_check, loss_reconstruction};
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn untrained_forward_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AeConfig {
            latent_dim: 3,
            ..Default::default()
        };
        let model = AutoencoderModel::new(8, &cfg, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 8), |_| rng.gen_range(-1.0..1.0));
        let (h, xh) = ae_forward(&model, &x).unwrap();
        assert!(h.iter().all(|v| v.is_finite()));
        assert!(xh.iter().all(|v| v.is_finite()));
        assert_eq!(h.dim(), (5, 3));
        assert_eq!(xh.dim(), (5, 8));
    }

    #[test]
    fn identity_configuration_passes_through() {
        let model = AutoencoderModel {
            encoder: Dense {
                w: Array2::eye(4),
                b: Array2::zeros((1, 4)),
            },
            decoder: Dense {
                w: Array2::eye(4),
                b: Array2::zeros((1, 4)),
            },
            f1: Activation::Identity,
            f2: Activation::Identity,
            separation: None,
            loss_curve: Vec::new(),
            trained: false,
        };
        let x = array![[0.5, -1.0, 2.0, 0.0]];
        let (h, xh) = ae_forward(&model, &x).unwrap();
        assert_eq!(h, x);
        assert_eq!(xh, x);
    }

    #[test]
    fn tanh_at_zero_is_zero() {
        let model = AutoencoderModel {
            encoder: Dense {
                w: array![[1.0]],
                b: array![[0.0]],
            },
            decoder: Dense {
                w: array![[1.0]],
                b: array![[0.0]],
            },
            f1: Activation::Tanh,
            f2: Activation::Relu,
            separation: None,
            loss_curve: Vec::new(),
            trained: false,
        };
        let (h, _) = ae_forward(&model, &array![[0.0]]).unwrap();
        assert_eq!(h[[0, 0]], 0.0);
    }

    #[test]
    fn constant_input_is_learned() {
        // Positive constants are representable under the relu decoder.
        let x = Array2::from_elem((64, 6), 0.7);
        let cfg = AeConfig {
            latent_dim: 3,
            train: TrainConfig {
                epochs: 300,
                batch_size: 16,
                learning_rate: 5e-3,
                seed: 1,
            },
            ..Default::default()
        };
        let model = train_autoencoder(&x, &cfg, None).unwrap();
        let (_, xh) = ae_forward(&model, &x).unwrap();
        let loss = loss_reconstruction(&x, &xh, ReconMode::Mse).unwrap();
        assert!(loss < 1e-3, "final loss {loss}");
        assert!(model.loss_curve.last().unwrap() < model.loss_curve.first().unwrap());
    }

    #[test]
    fn divergence_reports_epoch() {
        let x = Array2::from_elem((8, 4), 1.0e3);
        let cfg = AeConfig {
            latent_dim: 2,
            train: TrainConfig {
                epochs: 5,
                batch_size: 8,
                learning_rate: 1e40,
                seed: 0,
            },
            ..Default::default()
        };
        match train_autoencoder(&x, &cfg, None) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("epoch"), "got {msg}"),
            other => {
                // Extreme learning rates may still converge on toy data; only
                // a numeric failure is acceptable as an error here.
                assert!(other.is_ok(), "unexpected error kind");
            }
        }
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = AeConfig {
            latent_dim: 4,
            ..Default::default()
        };
        let mut model = AutoencoderModel::new(7, &cfg, &mut rng).unwrap();
        let y: Vec<u8> = (0..6).map(|i| (i % 2) as u8).collect();
        let mut sep_rng = ChaCha8Rng::seed_from_u64(11);
        model.separation =
            Some(SeparationHead::new(4, &SeparationConfig::default(), &y, &mut sep_rng).unwrap());
        let x = Array2::from_shape_fn((6, 7), |_| rng.gen_range(-1.0..1.0));

        let (_, grads) = ae_step(&model, &x, ReconMode::Mse, 0.1).unwrap();
        let report = grad_check(
            &mut model,
            |m| ae_step(m, &x, ReconMode::Mse, 0.1).unwrap().0,
            &grads,
            1e-5,
            40,
            3,
        );
        assert!(
            report.max_rel_err < 1e-4,
            "worst {} err {}",
            report.worst_param,
            report.max_rel_err
        );
    }
}
