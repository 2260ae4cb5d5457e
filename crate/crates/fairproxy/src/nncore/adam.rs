//! Adam optimizer over flat parameter lists.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment accumulators plus the step count.
/// Moment buffers are allocated lazily on the first step and mirror the
/// parameter shapes from then on.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step_count: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update. `names` is used only for diagnostics
    /// and may be shorter than the parameter list.
    pub fn step(
        &mut self,
        params: &mut [&mut Array2<f64>],
        grads: &[Array2<f64>],
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameter tensors", params.len()),
                format!("{} gradient tensors", grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
            self.v = self.m.clone();
        }
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|x| !x.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("param[{i}]"));
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
            if g.dim() != params[i].dim() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?}", params[i].dim()),
                    format!("{:?}", g.dim()),
                ));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let corr1 = 1.0 - b1.powi(t);
        let corr2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(g, |mi, &gi| *mi = b1 * *mi + (1.0 - b1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = b2 * *vi + (1.0 - b2) * gi * gi);
            ndarray::Zip::from(&mut **p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    let m_hat = mi / corr1;
                    let v_hat = vi / corr2;
                    *pi -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
                });
        }
        Ok(())
    }
}
