//! The downstream income classifier: input -> hidden relu -> sigmoid score.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::GroupProvenance;
use crate::nncore::{Activation, Dense, Init, ParamSet};

/// Two-layer MLP emitting scores in (0, 1).
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub l1: Dense,
    pub l2: Dense,
    pub provenance: GroupProvenance,
    pub loss_curve: Vec<f64>,
}

pub struct ForwardCache {
    pub a1: Array2<f64>,
    pub z2: Array1<f64>,
    pub s: Array1<f64>,
}

impl ClassifierModel {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng, provenance: GroupProvenance) -> Self {
        ClassifierModel {
            l1: Dense::new(input_dim, hidden, Init::He, rng),
            l2: Dense::new(hidden, 1, Init::Xavier, rng),
            provenance,
            loss_curve: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.input_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        let a1 = Activation::Relu.apply(&self.l1.forward(x)?);
        let z2 = self.l2.forward(&a1)?.index_axis_move(Axis(1), 0);
        let s = z2.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        Ok(ForwardCache { a1, z2, s })
    }

    /// Deterministic scores in (0, 1).
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                "predict",
                format!("width {}", self.input_dim()),
                format!("width {}", x.ncols()),
            ));
        }
        Ok(self.forward(x)?.s)
    }

    /// Hard labels at threshold 0.5.
    pub fn predict_hard(&self, x: &Array2<f64>) -> Result<Vec<u8>> {
        Ok(self.predict(x)?.iter().map(|&s| u8::from(s >= 0.5)).collect())
    }

    /// Backpropagates a per-row logit gradient; returns grads in parameter
    /// order [w1, b1, w2, b2].
    pub fn backward_from_logits(
        &self,
        x: &Array2<f64>,
        cache: &ForwardCache,
        d_z2: &Array1<f64>,
    ) -> Vec<Array2<f64>> {
        let d_z2m = d_z2.view().insert_axis(Axis(1)).to_owned();
        let (d_a1, d_w2, d_b2) = self.l2.backward(&cache.a1, &d_z2m);
        let d_z1 = Activation::Relu.grad_through(&cache.a1, &d_a1);
        let (_, d_w1, d_b1) = self.l1.backward(x, &d_z1);
        vec![d_w1, d_b1, d_w2, d_b2]
    }

    /// Value and parameter gradients of the fair-mixup path penalty
    ///
    ///   | mean_b  d/dt  s(x_mix_b) |  =  | mean_b grad_x s(x_mix_b) . d_b |
    ///
    /// where d = x1 - x0 row-wise. Returns ([dw1, db1, dw2, db2], value).
    pub fn mixup_penalty(
        &self,
        x_mix: &Array2<f64>,
        direction: &Array2<f64>,
    ) -> Result<(Vec<Array2<f64>>, f64)> {
        let nb = x_mix.nrows() as f64;
        let cache = self.forward(x_mix)?;
        let w2col = self.l2.w.column(0);

        // m = D W1, u = relu'(z1) scaled by w2, q_b = sum_j m_bj u_bj.
        let m = direction.dot(&self.l1.w);
        let mut u = cache.a1.mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
        for mut row in u.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= w2col[j];
            }
        }
        let q: Array1<f64> = (&m * &u).sum_axis(Axis(1));
        let sp: Array1<f64> = cache.s.mapv(|s| s * (1.0 - s));
        let spp: Array1<f64> = cache.s.mapv(|s| s * (1.0 - s) * (1.0 - 2.0 * s));
        let e = (&sp * &q).sum() / nb;
        let value = e.abs();
        let sign = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };

        // beta_b = s''_b q_b; row-scaled copies of u feed the matrix forms.
        let beta: Array1<f64> = &spp * &q;
        let scale_rows = |base: &Array2<f64>, w: &Array1<f64>| {
            let mut out = base.clone();
            for (mut row, &wi) in out.rows_mut().into_iter().zip(w.iter()) {
                row *= wi;
            }
            out
        };
        let u_beta = scale_rows(&u, &beta);
        let u_sp = scale_rows(&u, &sp);

        let d_w1 = (x_mix.t().dot(&u_beta) + direction.t().dot(&u_sp)).mapv(|v| sign * v / nb);
        let d_b1 = u_beta.sum_axis(Axis(0)).insert_axis(Axis(0)).mapv(|v| sign * v / nb);
        let d_w2_vec =
            (scale_rows(&cache.a1, &beta) + scale_rows(&(&m * &cache.a1.mapv(|a| if a > 0.0 { 1.0 } else { 0.0 })), &sp))
                .sum_axis(Axis(0));
        let d_w2 = d_w2_vec.insert_axis(Axis(1)).mapv(|v| sign * v / nb);
        let d_b2 = Array2::from_elem((1, 1), sign * beta.sum() / nb);
        Ok((vec![d_w1, d_b1, d_w2, d_b2], value))
    }
}

impl ParamSet for ClassifierModel {
    fn param_names(&self) -> Vec<String> {
        vec!["clf.w1".into(), "clf.b1".into(), "clf.w2".into(), "clf.b2".into()]
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.l1.w, &self.l1.b, &self.l2.w, &self.l2.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.l1.w, &mut self.l1.b, &mut self.l2.w, &mut self.l2.b]
    }
}
