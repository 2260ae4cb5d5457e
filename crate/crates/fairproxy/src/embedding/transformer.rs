//! Masked-field transformer encoder over tabular rows.
//!
//! Rows tokenize to CLS + one token per field. Token embeddings are the sum
//! of a per-field value embedding and a learned field embedding. Three
//! post-norm encoder blocks (multi-head self-attention, then a feed-forward
//! sublayer, each with a residual connection and layer norm) produce
//! contextual position vectors. The MLM head — a shared trunk plus a
//! per-field output layer — reconstructs the original tokens at masked
//! positions; the loss is cross entropy over masked positions only.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::{mha_self_backward, mha_self_forward, MhaCache, MhaGrads, MultiHead};
use super::separation::{SeparationConfig, SeparationHead};
use super::tokenizer::{mask_fields, Tokenizer};
use crate::dataset::EncodedTable;
use crate::error::{Error, Result};
use crate::nncore::{
    derive_seed, softmax_row, Activation, Adam, AdamConfig, Dense, Init, ParamSet, TrainConfig,
    PROB_EPS,
};

const LN_EPS: f64 = 1e-5;

/// How a row embedding is read off the final block output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolRule {
    /// The contextual CLS vector (position 0).
    Cls,
    /// Mean over all positions.
    Mean,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransformerConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    pub mlm_hidden: usize,
    pub mask_rate: f64,
    pub bins: usize,
    pub pool: PoolRule,
    /// Learned field embeddings added to value embeddings; disabled only by
    /// equivariance test configurations.
    pub field_embeddings: bool,
    pub train: TrainConfig,
    pub separation: Option<SeparationConfig>,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            width: 24,
            heads: 6,
            blocks: 3,
            ffn_hidden: 128,
            mlm_hidden: 64,
            mask_rate: 0.15,
            bins: 10,
            pool: PoolRule::Cls,
            field_embeddings: true,
            train: TrainConfig {
                epochs: 15,
                batch_size: 256,
                learning_rate: 1e-3,
                seed: 0,
            },
            separation: None,
        }
    }
}

/// Layer normalization over each position vector.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    fn new(width: usize) -> Self {
        LayerNorm {
            gamma: Array2::ones((1, width)),
            beta: Array2::zeros((1, width)),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let w = x.ncols() as f64;
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_std = Vec::with_capacity(x.nrows());
        for (r, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / w;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w;
            let istd = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(istd);
            for (c, &v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * istd;
            }
        }
        let mut out = xhat.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.gamma[[0, c]] + self.beta[[0, c]];
            }
        }
        (out, LnCache { xhat, inv_std })
    }

    fn backward(&self, cache: &LnCache, d_out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let w = d_out.ncols() as f64;
        let mut d_x = Array2::zeros(d_out.raw_dim());
        let mut d_gamma = Array2::zeros((1, d_out.ncols()));
        let mut d_beta = Array2::zeros((1, d_out.ncols()));
        for r in 0..d_out.nrows() {
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for c in 0..d_out.ncols() {
                let dy = d_out[[r, c]];
                let xh = cache.xhat[[r, c]];
                d_gamma[[0, c]] += dy * xh;
                d_beta[[0, c]] += dy;
                let dxh = dy * self.gamma[[0, c]];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh;
            }
            mean_dxhat /= w;
            mean_dxhat_xhat /= w;
            for c in 0..d_out.ncols() {
                let dxh = d_out[[r, c]] * self.gamma[[0, c]];
                d_x[[r, c]] =
                    cache.inv_std[r] * (dxh - mean_dxhat - cache.xhat[[r, c]] * mean_dxhat_xhat);
            }
        }
        (d_x, d_gamma, d_beta)
    }
}

/// One post-norm encoder block.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub mha: MultiHead,
    pub ln1: LayerNorm,
    pub ffn1: Dense,
    pub ffn2: Dense,
    pub ln2: LayerNorm,
}

pub struct BlockCache {
    mha: MhaCache,
    ln1: LnCache,
    n1: Array2<f64>,
    a1: Array2<f64>,
    ln2: LnCache,
}

pub struct BlockGrads {
    pub mha: MhaGrads,
    pub ln1_gamma: Array2<f64>,
    pub ln1_beta: Array2<f64>,
    pub ffn1_w: Array2<f64>,
    pub ffn1_b: Array2<f64>,
    pub ffn2_w: Array2<f64>,
    pub ffn2_b: Array2<f64>,
    pub ln2_gamma: Array2<f64>,
    pub ln2_beta: Array2<f64>,
}

impl EncoderBlock {
    fn new(width: usize, heads: usize, ffn_hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if width % heads != 0 {
            return Err(Error::Config(format!(
                "transformer: {heads} heads do not divide width {width}"
            )));
        }
        let d_k = width / heads;
        let proj = |rng: &mut ChaCha8Rng| Dense::new(width, d_k, Init::Xavier, rng).w;
        let mha = MultiHead {
            wq: (0..heads).map(|_| proj(rng)).collect(),
            wk: (0..heads).map(|_| proj(rng)).collect(),
            wv: (0..heads).map(|_| proj(rng)).collect(),
            wo: Dense::new(width, width, Init::Xavier, rng).w,
        };
        Ok(EncoderBlock {
            mha,
            ln1: LayerNorm::new(width),
            ffn1: Dense::new(width, ffn_hidden, Init::He, rng),
            ffn2: Dense::new(ffn_hidden, width, Init::Xavier, rng),
            ln2: LayerNorm::new(width),
        })
    }

    /// x -> LN2(n1 + FFN(n1)) where n1 = LN1(x + MHA(x)).
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, BlockCache)> {
        let (attn, mha_cache) = mha_self_forward(x, &self.mha)?;
        let r1 = x + &attn;
        let (n1, ln1_cache) = self.ln1.forward(&r1);
        let a1 = Activation::Relu.apply(&self.ffn1.forward(&n1)?);
        let m = self.ffn2.forward(&a1)?;
        let r2 = &n1 + &m;
        let (out, ln2_cache) = self.ln2.forward(&r2);
        Ok((
            out,
            BlockCache {
                mha: mha_cache,
                ln1: ln1_cache,
                n1,
                a1,
                ln2: ln2_cache,
            },
        ))
    }

    pub fn backward(&self, x: &Array2<f64>, cache: &BlockCache, d_out: &Array2<f64>) -> (Array2<f64>, BlockGrads) {
        let (d_r2, ln2_gamma, ln2_beta) = self.ln2.backward(&cache.ln2, d_out);
        // r2 = n1 + ffn2(relu(ffn1(n1)))
        let (d_a1, ffn2_w, ffn2_b) = self.ffn2.backward(&cache.a1, &d_r2);
        let d_z1 = Activation::Relu.grad_through(&cache.a1, &d_a1);
        let (d_n1_ffn, ffn1_w, ffn1_b) = self.ffn1.backward(&cache.n1, &d_z1);
        let d_n1 = &d_r2 + &d_n1_ffn;
        let (d_r1, ln1_gamma, ln1_beta) = self.ln1.backward(&cache.ln1, &d_n1);
        // r1 = x + mha(x)
        let (d_x_attn, mha) = mha_self_backward(x, &self.mha, &cache.mha, &d_r1);
        let d_x = &d_r1 + &d_x_attn;
        (
            d_x,
            BlockGrads {
                mha,
                ln1_gamma,
                ln1_beta,
                ffn1_w,
                ffn1_b,
                ffn2_w,
                ffn2_b,
                ln2_gamma,
                ln2_beta,
            },
        )
    }
}

/// The full masked-field model.
#[derive(Debug, Clone)]
pub struct TransformerModel {
    pub tokenizer: Tokenizer,
    pub field_emb: Array2<f64>,
    pub value_emb: Vec<Array2<f64>>,
    pub blocks: Vec<EncoderBlock>,
    pub mlm_trunk: Dense,
    pub mlm_heads: Vec<Dense>,
    pub separation: Option<SeparationHead>,
    pub pool: PoolRule,
    pub field_embeddings: bool,
    pub loss_curve: Vec<f64>,
    pub trained: bool,
}

impl TransformerModel {
    pub fn new(tokenizer: Tokenizer, cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = cfg.width;
        let seq = tokenizer.seq_len();
        let field_emb = Dense::new(seq, w, Init::Xavier, rng).w;
        let value_emb = tokenizer
            .fields
            .iter()
            .map(|f| Dense::new(f.vocab_size(), w, Init::Xavier, rng).w)
            .collect();
        let blocks = (0..cfg.blocks)
            .map(|_| EncoderBlock::new(w, cfg.heads, cfg.ffn_hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        let mlm_trunk = Dense::new(w, cfg.mlm_hidden, Init::He, rng);
        let mlm_heads = tokenizer
            .fields
            .iter()
            .map(|f| Dense::new(cfg.mlm_hidden, f.vocab_size(), Init::Xavier, rng))
            .collect();
        Ok(TransformerModel {
            tokenizer,
            field_emb,
            value_emb,
            blocks,
            mlm_trunk,
            mlm_heads,
            separation: None,
            pool: cfg.pool,
            field_embeddings: cfg.field_embeddings,
            loss_curve: Vec::new(),
            trained: false,
        })
    }

    pub fn width(&self) -> usize {
        self.field_emb.ncols()
    }

    fn embed_tokens(&self, tokens: &[u32]) -> Array2<f64> {
        let w = self.width();
        let mut x = Array2::zeros((tokens.len(), w));
        x.row_mut(0).assign(&self.field_emb.row(0));
        for (t, &tok) in tokens.iter().enumerate().skip(1) {
            let table = &self.value_emb[t - 1];
            x.row_mut(t).assign(&table.row(tok as usize));
            if self.field_embeddings {
                let mut row = x.row_mut(t);
                row += &self.field_emb.row(t);
            }
        }
        x
    }

    /// Runs the encoder stack; returns the final position vectors.
    pub fn encode_tokens(&self, tokens: &[u32]) -> Result<Array2<f64>> {
        let mut h = self.embed_tokens(tokens);
        for block in &self.blocks {
            let (next, _) = block.forward(&h)?;
            h = next;
        }
        Ok(h)
    }

    /// Row embedding after pooling.
    pub fn row_embedding(&self, tokens: &[u32]) -> Result<Array1<f64>> {
        let h = self.encode_tokens(tokens)?;
        Ok(match self.pool {
            PoolRule::Cls => h.row(0).to_owned(),
            PoolRule::Mean => h.mean_axis(Axis(0)).expect("non-empty sequence"),
        })
    }

    /// MLM probabilities for one masked position (field index is 0-based).
    pub fn mlm_probs(&self, h_pos: &Array1<f64>, field: usize) -> Result<Array1<f64>> {
        let h2 = h_pos.view().insert_axis(Axis(0)).to_owned();
        let u = Activation::Relu.apply(&self.mlm_trunk.forward(&h2)?);
        let logits = self.mlm_heads[field].forward(&u)?;
        Ok(softmax_row(&logits.row(0)))
    }
}

impl ParamSet for TransformerModel {
    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["field_emb".to_string()];
        for f in 0..self.value_emb.len() {
            names.push(format!("value_emb[{f}]"));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            for i in 0..block.mha.n_heads() {
                names.push(format!("block{b}.wq{i}"));
            }
            for i in 0..block.mha.n_heads() {
                names.push(format!("block{b}.wk{i}"));
            }
            for i in 0..block.mha.n_heads() {
                names.push(format!("block{b}.wv{i}"));
            }
            names.push(format!("block{b}.wo"));
            names.push(format!("block{b}.ln1.gamma"));
            names.push(format!("block{b}.ln1.beta"));
            names.push(format!("block{b}.ffn1.w"));
            names.push(format!("block{b}.ffn1.b"));
            names.push(format!("block{b}.ffn2.w"));
            names.push(format!("block{b}.ffn2.b"));
            names.push(format!("block{b}.ln2.gamma"));
            names.push(format!("block{b}.ln2.beta"));
        }
        names.push("mlm_trunk.w".to_string());
        names.push("mlm_trunk.b".to_string());
        for f in 0..self.mlm_heads.len() {
            names.push(format!("mlm_head[{f}].w"));
            names.push(format!("mlm_head[{f}].b"));
        }
        if self.separation.is_some() {
            names.extend(SeparationHead::param_names("t."));
        }
        names
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        let mut ps: Vec<&Array2<f64>> = vec![&self.field_emb];
        ps.extend(self.value_emb.iter());
        for block in &self.blocks {
            ps.extend(block.mha.wq.iter());
            ps.extend(block.mha.wk.iter());
            ps.extend(block.mha.wv.iter());
            ps.push(&block.mha.wo);
            ps.push(&block.ln1.gamma);
            ps.push(&block.ln1.beta);
            ps.push(&block.ffn1.w);
            ps.push(&block.ffn1.b);
            ps.push(&block.ffn2.w);
            ps.push(&block.ffn2.b);
            ps.push(&block.ln2.gamma);
            ps.push(&block.ln2.beta);
        }
        ps.push(&self.mlm_trunk.w);
        ps.push(&self.mlm_trunk.b);
        for head in &self.mlm_heads {
            ps.push(&head.w);
            ps.push(&head.b);
        }
        if let Some(sep) = &self.separation {
            ps.extend(sep.params());
        }
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut ps: Vec<&mut Array2<f64>> = vec![&mut self.field_emb];
        ps.extend(self.value_emb.iter_mut());
        for block in &mut self.blocks {
            ps.extend(block.mha.wq.iter_mut());
            ps.extend(block.mha.wk.iter_mut());
            ps.extend(block.mha.wv.iter_mut());
            ps.push(&mut block.mha.wo);
            ps.push(&mut block.ln1.gamma);
            ps.push(&mut block.ln1.beta);
            ps.push(&mut block.ffn1.w);
            ps.push(&mut block.ffn1.b);
            ps.push(&mut block.ffn2.w);
            ps.push(&mut block.ffn2.b);
            ps.push(&mut block.ln2.gamma);
            ps.push(&mut block.ln2.beta);
        }
        ps.push(&mut self.mlm_trunk.w);
        ps.push(&mut self.mlm_trunk.b);
        for head in &mut self.mlm_heads {
            ps.push(&mut head.w);
            ps.push(&mut head.b);
        }
        if let Some(sep) = &mut self.separation {
            ps.extend(sep.params_mut());
        }
        ps
    }
}

/// A masked training example: masked token sequence, masked positions, and
/// the original (target) tokens.
pub struct MaskedRow<'a> {
    pub masked: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: &'a [u32],
}

/// Gradient buffer parallel to the model's parameter order.
fn zero_grads(model: &TransformerModel) -> Vec<Array2<f64>> {
    model.params().iter().map(|p| Array2::zeros(p.dim())).collect()
}

fn add_grads(acc: &mut [Array2<f64>], other: &[Array2<f64>]) {
    for (a, o) in acc.iter_mut().zip(other) {
        *a += o;
    }
}

/// Index bookkeeping for the flat gradient vector.
struct ParamIndex {
    value_emb: usize,
    blocks: usize,
    per_block: usize,
    mlm_trunk: usize,
    mlm_heads: usize,
    sep: Option<usize>,
}

impl ParamIndex {
    fn of(model: &TransformerModel) -> Self {
        let n_heads = model.blocks[0].mha.n_heads();
        let per_block = 3 * n_heads + 9;
        let value_emb = 1;
        let blocks = value_emb + model.value_emb.len();
        let mlm_trunk = blocks + model.blocks.len() * per_block;
        let mlm_heads = mlm_trunk + 2;
        let sep = model
            .separation
            .as_ref()
            .map(|_| mlm_heads + 2 * model.mlm_heads.len());
        ParamIndex {
            value_emb,
            blocks,
            per_block,
            mlm_trunk,
            mlm_heads,
            sep,
        }
    }
}

/// Forward + backward for one row. Adds parameter gradients (scaled by
/// `ce_scale` for the MLM term) into `grads` and returns the row's summed CE
/// over masked positions. `d_h0_extra` carries the separation gradient for
/// the CLS position, if any.
fn row_step(
    model: &TransformerModel,
    idx: &ParamIndex,
    row: &MaskedRow,
    ce_scale: f64,
    d_h0_extra: Option<&Array1<f64>>,
    grads: &mut [Array2<f64>],
) -> Result<f64> {
    let x0 = model.embed_tokens(&row.masked);
    let mut caches = Vec::with_capacity(model.blocks.len());
    let mut inputs = Vec::with_capacity(model.blocks.len());
    let mut h = x0;
    for block in &model.blocks {
        inputs.push(h.clone());
        let (next, cache) = block.forward(&h)?;
        caches.push(cache);
        h = next;
    }

    let mut d_h = Array2::zeros(h.raw_dim());
    let mut ce_sum = 0.0;

    // MLM head at each masked position.
    for &pos in &row.positions {
        let field = pos - 1;
        let h_pos = h.row(pos).to_owned().insert_axis(Axis(0));
        let z_u = model.mlm_trunk.forward(&h_pos)?;
        let u = Activation::Relu.apply(&z_u);
        let logits = model.mlm_heads[field].forward(&u)?;
        let p = softmax_row(&logits.row(0));
        let target = row.targets[pos] as usize;
        ce_sum += -p[target].max(PROB_EPS).ln();

        // d logits = (p - onehot) * ce_scale
        let mut d_logits = p.insert_axis(Axis(0));
        d_logits[[0, target]] -= 1.0;
        d_logits *= ce_scale;
        let (d_u, d_hw, d_hb) = model.mlm_heads[field].backward(&u, &d_logits);
        let head_at = idx.mlm_heads + 2 * field;
        grads[head_at] += &d_hw;
        grads[head_at + 1] += &d_hb;
        let d_zu = Activation::Relu.grad_through(&u, &d_u);
        let (d_hpos, d_tw, d_tb) = model.mlm_trunk.backward(&h_pos, &d_zu);
        grads[idx.mlm_trunk] += &d_tw;
        grads[idx.mlm_trunk + 1] += &d_tb;
        let mut row_grad = d_h.row_mut(pos);
        row_grad += &d_hpos.row(0);
    }

    if let Some(extra) = d_h0_extra {
        let mut row_grad = d_h.row_mut(0);
        row_grad += extra;
    }

    // Backward through the blocks.
    for (b, block) in model.blocks.iter().enumerate().rev() {
        let (d_x, bg) = block.backward(&inputs[b], &caches[b], &d_h);
        let base = idx.blocks + b * idx.per_block;
        let n_heads = block.mha.n_heads();
        for i in 0..n_heads {
            grads[base + i] += &bg.mha.wq[i];
            grads[base + n_heads + i] += &bg.mha.wk[i];
            grads[base + 2 * n_heads + i] += &bg.mha.wv[i];
        }
        let o = base + 3 * n_heads;
        grads[o] += &bg.mha.wo;
        grads[o + 1] += &bg.ln1_gamma;
        grads[o + 2] += &bg.ln1_beta;
        grads[o + 3] += &bg.ffn1_w;
        grads[o + 4] += &bg.ffn1_b;
        grads[o + 5] += &bg.ffn2_w;
        grads[o + 6] += &bg.ffn2_b;
        grads[o + 7] += &bg.ln2_gamma;
        grads[o + 8] += &bg.ln2_beta;
        d_h = d_x;
    }

    // Embedding gradients.
    {
        let mut g0 = grads[0].row_mut(0);
        g0 += &d_h.row(0);
    }
    for (t, &tok) in row.masked.iter().enumerate().skip(1) {
        let mut vg = grads[idx.value_emb + t - 1].row_mut(tok as usize);
        vg += &d_h.row(t);
        if model.field_embeddings {
            let mut fg = grads[0].row_mut(t);
            fg += &d_h.row(t);
        }
    }
    Ok(ce_sum)
}

/// Loss and gradients for a batch of masked rows (plus the separation term
/// when the model carries a head and beta > 0).
pub fn batch_step(
    model: &TransformerModel,
    rows: &[MaskedRow],
    beta: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let idx = ParamIndex::of(model);
    let n_masked: usize = rows.iter().map(|r| r.positions.len()).sum();
    let ce_scale = 1.0 / n_masked.max(1) as f64;

    // Separation term: forward the CLS vectors as one batch first.
    let mut d_h0_rows: Option<Vec<Array1<f64>>> = None;
    let mut sep_loss = 0.0;
    if let Some(head) = &model.separation {
        if beta != 0.0 {
            let mut h0 = Array2::zeros((rows.len(), model.width()));
            for (i, row) in rows.iter().enumerate() {
                let h = model.encode_tokens(&row.masked)?;
                h0.row_mut(i).assign(&h.row(0));
            }
            let (a1, p) = head.forward(&h0)?;
            sep_loss = head.loss(&p)?;
            let (d_h0, sep_grads) = head.backward(&h0, &a1, &p);
            d_h0_rows = Some((0..rows.len()).map(|i| d_h0.row(i).to_owned() * beta).collect());
            let sep_at = idx.sep.expect("separation head is indexed");
            let mut grads = zero_grads(model);
            for (k, g) in sep_grads.into_iter().enumerate() {
                grads[sep_at + k] = g * beta;
            }
            // Fold the per-row work into this buffer below.
            let mut ce_total = 0.0;
            for (i, row) in rows.iter().enumerate() {
                ce_total += row_step(
                    model,
                    &idx,
                    row,
                    ce_scale,
                    d_h0_rows.as_ref().map(|v| &v[i]),
                    &mut grads,
                )?;
            }
            return Ok((ce_total * ce_scale + beta * sep_loss, grads));
        }
    }
    let _ = sep_loss;
    let _ = d_h0_rows;

    // No separation: chunked deterministic parallelism over rows.
    let n_chunks = 4usize;
    let chunk_size = rows.len().div_ceil(n_chunks);
    let partials: Vec<Result<(f64, Vec<Array2<f64>>)>> = rows
        .par_chunks(chunk_size.max(1))
        .map(|chunk| {
            let mut grads = zero_grads(model);
            let mut ce = 0.0;
            for row in chunk {
                ce += row_step(model, &idx, row, ce_scale, None, &mut grads)?;
            }
            Ok((ce, grads))
        })
        .collect();
    let mut grads = zero_grads(model);
    let mut ce_total = 0.0;
    for partial in partials {
        let (ce, g) = partial?;
        ce_total += ce;
        add_grads(&mut grads, &g);
    }
    Ok((ce_total * ce_scale, grads))
}

/// Trains the transformer with masked-field modeling.
pub fn train_transformer_mlm(
    table: &EncodedTable,
    cfg: &TransformerConfig,
    labels: Option<&[u8]>,
) -> Result<TransformerModel> {
    cfg.train.validate()?;
    if !(0.0..=1.0).contains(&cfg.mask_rate) || cfg.mask_rate == 0.0 {
        return Err(Error::Config(format!("mask rate {} out of (0, 1]", cfg.mask_rate)));
    }
    let all_rows: Vec<usize> = (0..table.n_rows()).collect();
    let tokenizer = Tokenizer::fit(table, cfg.bins, &all_rows)?;
    let tokens = tokenizer.tokenize_table(table);

    let mut param_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "t-params"));
    let mut model = TransformerModel::new(tokenizer, cfg, &mut param_rng)?;
    let beta = match (&cfg.separation, labels) {
        (Some(sep), Some(y)) => {
            let mut sep_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "t-separation"));
            model.separation = Some(SeparationHead::new(cfg.width, sep, y, &mut sep_rng)?);
            sep.beta
        }
        (Some(_), None) => {
            return Err(Error::Config(
                "train_transformer_mlm: separation requested but no labels supplied".into(),
            ))
        }
        _ => 0.0,
    };

    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "t-batches"));
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.train.learning_rate));
    let names = model.param_names();
    let mut order: Vec<usize> = (0..table.n_rows()).collect();

    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut batch_rng);
        let mask_seed = derive_seed(cfg.train.seed, &format!("t-mask-{epoch}"));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.train.batch_size) {
            let rows: Vec<MaskedRow> = chunk
                .iter()
                .map(|&r| {
                    let (masked, positions) = mask_fields(
                        &tokens[r],
                        &model.tokenizer,
                        cfg.mask_rate,
                        mask_seed,
                        table.ids[r],
                    );
                    MaskedRow {
                        masked,
                        positions,
                        targets: &tokens[r],
                    }
                })
                .collect();
            let (loss, grads) = batch_step(&model, &rows, beta)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "train_transformer_mlm diverged at epoch {epoch}"
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

/// Masked-field prediction accuracy over a token corpus.
pub fn masked_accuracy(model: &TransformerModel, tokens: &[Vec<u32>], rate: f64, seed: u64) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (r, seq) in tokens.iter().enumerate() {
        let (masked, positions) = mask_fields(seq, &model.tokenizer, rate, seed, r as u64);
        let h = model.encode_tokens(&masked)?;
        for &pos in &positions {
            let p = model.mlm_probs(&h.row(pos).to_owned(), pos - 1)?;
            let pred = p
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite probs"))
                .map(|(i, _)| i)
                .expect("non-empty vocab");
            hits += usize::from(pred == seq[pos] as usize);
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic;
    use crate::nncore::grad_check;
    use rand::Rng;

    fn tiny_cfg(seed: u64) -> TransformerConfig {
        TransformerConfig {
            width: 12,
            heads: 3,
            blocks: 2,
            ffn_hidden: 20,
            mlm_hidden: 16,
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                learning_rate: 1e-3,
                seed,
            },
            ..Default::default()
        }
    }

    fn tiny_model(seed: u64) -> (EncodedTable, TransformerModel, Vec<Vec<u32>>) {
        let table = make_synthetic(24, 0.8, seed).unwrap();
        let rows: Vec<usize> = (0..table.n_rows()).collect();
        let tokenizer = Tokenizer::fit(&table, 4, &rows).unwrap();
        let tokens = tokenizer.tokenize_table(&table);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = TransformerModel::new(tokenizer, &tiny_cfg(seed), &mut rng).unwrap();
        (table, model, tokens)
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ln = LayerNorm::new(6);
        let x = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-2.0..2.0));
        let target = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let loss = |ln: &LayerNorm, x: &Array2<f64>| {
            let (out, _) = ln.forward(x);
            (&out - &target).mapv(|v| v * v).sum()
        };
        let (out, cache) = ln.forward(&x);
        let d_out = (&out - &target) * 2.0;
        let (d_x, _, _) = ln.backward(&cache, &d_out);
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..6 {
                let mut xp = x.clone();
                xp[[i, j]] += eps;
                let mut xm = x.clone();
                xm[[i, j]] -= eps;
                let fd = (loss(&ln, &xp) - loss(&ln, &xm)) / (2.0 * eps);
                assert!(
                    (fd - d_x[[i, j]]).abs() < 1e-5,
                    "dx[{i},{j}] fd {fd} vs {}",
                    d_x[[i, j]]
                );
            }
        }
    }

    #[test]
    fn block_is_permutation_equivariant_without_field_embeddings() {
        let (_, model, _) = tiny_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((5, 12), |_| rng.gen_range(-1.0..1.0));
        let perm = [3usize, 0, 4, 1, 2];
        let xp = Array2::from_shape_fn(x.dim(), |(i, j)| x[[perm[i], j]]);
        let (out, _) = model.blocks[0].forward(&x).unwrap();
        let (outp, _) = model.blocks[0].forward(&xp).unwrap();
        for i in 0..5 {
            for j in 0..12 {
                assert!(
                    (outp[[i, j]] - out[[perm[i], j]]).abs() < 1e-12,
                    "row {i} col {j}"
                );
            }
        }
    }

    #[test]
    fn unmasked_targets_do_not_affect_loss() {
        let (_, model, tokens) = tiny_model(5);
        let (masked, positions) = mask_fields(&tokens[0], &model.tokenizer, 0.15, 9, 0);
        let row = MaskedRow {
            masked: masked.clone(),
            positions: positions.clone(),
            targets: &tokens[0],
        };
        let (loss_a, _) = batch_step(&model, &[row], 0.0).unwrap();
        // Perturb a target at an unmasked position.
        let mut altered = tokens[0].clone();
        let untouched = (1..altered.len()).find(|p| !positions.contains(p)).unwrap();
        altered[untouched] = (altered[untouched] + 1) % model.tokenizer.fields[untouched - 1].vocab_size() as u32;
        let row_b = MaskedRow {
            masked,
            positions,
            targets: &altered,
        };
        let (loss_b, _) = batch_step(&model, &[row_b], 0.0).unwrap();
        assert_eq!(loss_a, loss_b);
    }

    #[test]
    fn transformer_gradients_pass_fd_check() {
        let (_, mut model, tokens) = tiny_model(7);
        let rows: Vec<MaskedRow> = (0..4)
            .map(|r| {
                let (masked, positions) = mask_fields(&tokens[r], &model.tokenizer, 0.3, 1, r as u64);
                MaskedRow {
                    masked,
                    positions,
                    targets: &tokens[r],
                }
            })
            .collect();
        let (_, grads) = batch_step(&model, &rows, 0.0).unwrap();
        let report = grad_check(
            &mut model,
            |m| batch_step(m, &rows, 0.0).unwrap().0,
            &grads,
            1e-5,
            6,
            11,
        );
        assert!(
            report.max_rel_err < 1e-3,
            "worst {} err {}",
            report.worst_param,
            report.max_rel_err
        );
    }

    #[test]
    fn memorizes_a_single_repeated_row() {
        let mut table = make_synthetic(48, 1.0, 2).unwrap();
        // Repeat the first row everywhere: MLM should reach accuracy 1.
        let first = table.x.row(0).to_owned();
        for r in 1..table.n_rows() {
            table.x.row_mut(r).assign(&first);
        }
        let cfg = TransformerConfig {
            train: TrainConfig {
                epochs: 60,
                batch_size: 16,
                learning_rate: 3e-3,
                seed: 3,
            },
            ..tiny_cfg(3)
        };
        let model = train_transformer_mlm(&table, &cfg, None).unwrap();
        let rows: Vec<usize> = (0..table.n_rows()).collect();
        let tokenizer = Tokenizer::fit(&table, cfg.bins, &rows).unwrap();
        let tokens = tokenizer.tokenize_table(&table);
        let acc = masked_accuracy(&model, &tokens, 0.15, 77).unwrap();
        assert!(acc > 0.99, "masked accuracy {acc}");
    }
}
