//! Scaled dot-product and multi-head self-attention, forward and backward.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nncore::Activation;

/// softmax(Q K^T / sqrt(d_k)) V, also returning the attention weights.
pub fn attention_with_weights(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let d_k = k.ncols();
    if d_k == 0 {
        return Err(Error::Config("attention: d_k must be > 0".into()));
    }
    if q.ncols() != d_k {
        return Err(Error::shape("attention", format!("key width {d_k}"), format!("{}", q.ncols())));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::shape(
            "attention",
            format!("{} key rows", k.nrows()),
            format!("{} value rows", v.nrows()),
        ));
    }
    let scale = 1.0 / (d_k as f64).sqrt();
    let scores = q.dot(&k.t()) * scale;
    let weights = Activation::Softmax.apply(&scores);
    let out = weights.dot(v);
    Ok((out, weights))
}

/// softmax(Q K^T / sqrt(d_k)) V.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    attention_with_weights(q, k, v).map(|(out, _)| out)
}

/// Backward through [`attention`]. `weights` must be the softmax output of
/// the forward pass. Returns (dQ, dK, dV).
pub fn attention_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    weights: &Array2<f64>,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (k.ncols() as f64).sqrt();
    let d_weights = d_out.dot(&v.t());
    let d_v = weights.t().dot(d_out);
    let d_scores = Activation::Softmax.grad_through(weights, &d_weights);
    let d_q = d_scores.dot(k) * scale;
    let d_k = d_scores.t().dot(q) * scale;
    (d_q, d_k, d_v)
}

/// Per-head projections plus the output projection of multi-head attention.
#[derive(Debug, Clone)]
pub struct MultiHead {
    pub wq: Vec<Array2<f64>>,
    pub wk: Vec<Array2<f64>>,
    pub wv: Vec<Array2<f64>>,
    pub wo: Array2<f64>,
}

impl MultiHead {
    pub fn n_heads(&self) -> usize {
        self.wq.len()
    }

    pub fn head_dim(&self) -> usize {
        self.wq.first().map_or(0, |w| w.ncols())
    }
}

/// Concat(head_1, ..., head_h) W^O with head_i = Attention(Q Wq_i, K Wk_i, V Wv_i).
pub fn multi_head(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    heads: &MultiHead,
) -> Result<Array2<f64>> {
    let h = heads.n_heads();
    if h == 0 {
        return Err(Error::Config("multi_head: no heads".into()));
    }
    let width = q.ncols();
    if width % h != 0 || heads.head_dim() * h != heads.wo.nrows() {
        return Err(Error::Config(format!(
            "multi_head: {h} heads do not divide width {width} (wo rows {})",
            heads.wo.nrows()
        )));
    }
    let mut concat = Array2::zeros((q.nrows(), heads.head_dim() * h));
    for i in 0..h {
        let qi = q.dot(&heads.wq[i]);
        let ki = k.dot(&heads.wk[i]);
        let vi = v.dot(&heads.wv[i]);
        let (out, _) = attention_with_weights(&qi, &ki, &vi)?;
        let d = heads.head_dim();
        concat
            .slice_mut(ndarray::s![.., i * d..(i + 1) * d])
            .assign(&out);
    }
    Ok(concat.dot(&heads.wo))
}

/// Cached intermediates of a multi-head self-attention forward pass.
pub struct MhaCache {
    pub qs: Vec<Array2<f64>>,
    pub ks: Vec<Array2<f64>>,
    pub vs: Vec<Array2<f64>>,
    pub weights: Vec<Array2<f64>>,
    pub concat: Array2<f64>,
}

/// Self-attention forward over a single sequence x (rows are positions).
pub fn mha_self_forward(x: &Array2<f64>, heads: &MultiHead) -> Result<(Array2<f64>, MhaCache)> {
    let h = heads.n_heads();
    let d = heads.head_dim();
    let mut cache = MhaCache {
        qs: Vec::with_capacity(h),
        ks: Vec::with_capacity(h),
        vs: Vec::with_capacity(h),
        weights: Vec::with_capacity(h),
        concat: Array2::zeros((x.nrows(), h * d)),
    };
    for i in 0..h {
        let qi = x.dot(&heads.wq[i]);
        let ki = x.dot(&heads.wk[i]);
        let vi = x.dot(&heads.wv[i]);
        let (out, w) = attention_with_weights(&qi, &ki, &vi)?;
        cache
            .concat
            .slice_mut(ndarray::s![.., i * d..(i + 1) * d])
            .assign(&out);
        cache.qs.push(qi);
        cache.ks.push(ki);
        cache.vs.push(vi);
        cache.weights.push(w);
    }
    let out = cache.concat.dot(&heads.wo);
    Ok((out, cache))
}

/// Gradients of the multi-head parameters for one sequence.
pub struct MhaGrads {
    pub wq: Vec<Array2<f64>>,
    pub wk: Vec<Array2<f64>>,
    pub wv: Vec<Array2<f64>>,
    pub wo: Array2<f64>,
}

/// Backward through [`mha_self_forward`]; returns dX and parameter grads.
pub fn mha_self_backward(
    x: &Array2<f64>,
    heads: &MultiHead,
    cache: &MhaCache,
    d_out: &Array2<f64>,
) -> (Array2<f64>, MhaGrads) {
    let h = heads.n_heads();
    let d = heads.head_dim();
    let d_concat = d_out.dot(&heads.wo.t());
    let d_wo = cache.concat.t().dot(d_out);
    let mut d_x = Array2::zeros(x.raw_dim());
    let mut grads = MhaGrads {
        wq: Vec::with_capacity(h),
        wk: Vec::with_capacity(h),
        wv: Vec::with_capacity(h),
        wo: d_wo,
    };
    for i in 0..h {
        let d_head = d_concat.slice(ndarray::s![.., i * d..(i + 1) * d]).to_owned();
        let (d_qi, d_ki, d_vi) =
            attention_backward(&cache.qs[i], &cache.ks[i], &cache.vs[i], &cache.weights[i], &d_head);
        d_x += &d_qi.dot(&heads.wq[i].t());
        d_x += &d_ki.dot(&heads.wk[i].t());
        d_x += &d_vi.dot(&heads.wv[i].t());
        grads.wq.push(x.t().dot(&d_qi));
        grads.wk.push(x.t().dot(&d_ki));
        grads.wv.push(x.t().dot(&d_vi));
    }
    (d_x, grads)
}
