//! Dense layers and activations.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activations supported by [`dense_forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    /// Applies the activation row-wise.
    pub fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Sigmoid => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Softmax => {
                let mut out = z.clone();
                for mut row in out.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let sum: f64 = row.sum();
                    row.mapv_inplace(|v| (v / sum).max(super::PROB_EPS));
                    let sum2: f64 = row.sum();
                    row.mapv_inplace(|v| v / sum2);
                }
                out
            }
        }
    }

    /// Pulls an upstream gradient through the activation.
    ///
    /// `out` must be the value this activation produced. Returns dL/dz given
    /// dL/da where a = apply(z).
    pub fn grad_through(&self, out: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => upstream.clone(),
            Activation::Relu => {
                let mut g = upstream.clone();
                g.zip_mut_with(out, |u, &a| {
                    if a <= 0.0 {
                        *u = 0.0;
                    }
                });
                g
            }
            Activation::Tanh => {
                let mut g = upstream.clone();
                g.zip_mut_with(out, |u, &a| *u *= 1.0 - a * a);
                g
            }
            Activation::Sigmoid => {
                let mut g = upstream.clone();
                g.zip_mut_with(out, |u, &a| *u *= a * (1.0 - a));
                g
            }
            Activation::Softmax => {
                // dL/dz_i = p_i * (g_i - sum_j g_j p_j), per row.
                let mut g = upstream.clone();
                for (mut grow, prow) in g.rows_mut().into_iter().zip(out.rows()) {
                    let dot: f64 = grow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                    for (gi, &pi) in grow.iter_mut().zip(prow.iter()) {
                        *gi = pi * (*gi - dot);
                    }
                }
                g
            }
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Xavier,
    /// Normal(0, sqrt(2 / fan_in)); suits relu layers.
    He,
    Zeros,
}

/// A fully connected layer: y = x . w + b with w of shape in x out and b 1 x out.
///
/// Holds the weight/bias pairs the embedding and mitigation models are built
/// from, including probe weight matrices.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Dense {
    pub fn new(input_dim: usize, output_dim: usize, init: Init, rng: &mut ChaCha8Rng) -> Self {
        let w = match init {
            Init::Xavier => {
                let a = (6.0 / (input_dim + output_dim) as f64).sqrt();
                Array2::from_shape_fn((input_dim, output_dim), |_| rng.gen_range(-a..a))
            }
            Init::He => {
                let std = (2.0 / input_dim as f64).sqrt();
                Array2::from_shape_fn((input_dim, output_dim), |_| {
                    // Box-Muller; two uniforms per normal keeps the stream simple.
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
            }
            Init::Zeros => Array2::zeros((input_dim, output_dim)),
        };
        Dense {
            w,
            b: Array2::zeros((1, output_dim)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Pre-activation forward pass: z = x . w + b.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.w.nrows() {
            return Err(Error::shape(
                "dense_forward",
                format!("input width {}", self.w.nrows()),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        let mut z = x.dot(&self.w);
        z += &self.b;
        Ok(z)
    }

    /// Backward pass. Given the layer input and dL/dz, returns
    /// (dL/dx, dL/dw, dL/db).
    pub fn backward(&self, x: &Array2<f64>, dz: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let dx = dz.dot(&self.w.t());
        let dw = x.t().dot(dz);
        let db = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        (dx, dw, db)
    }
}

/// output = activation(x . w + b), row-wise.
pub fn dense_forward(params: &Dense, input: &Array2<f64>, activation: Activation) -> Result<Array2<f64>> {
    Ok(activation.apply(&params.forward(input)?))
}
