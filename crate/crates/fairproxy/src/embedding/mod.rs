//! Stage one: contextual row embeddings from self-supervised training.
//!
//! Two generators are available — a one-hidden-layer autoencoder trained on
//! reconstruction, and a transformer encoder trained with masked-field
//! modeling — each optionally augmented with the KL separation head that
//! keeps downstream-label information out of the embedding.

mod attention;
mod autoencoder;
mod separation;
mod tokenizer;
mod transformer;

pub use attention::{
    attention, attention_backward, attention_with_weights, mha_self_backward, mha_self_forward,
    multi_head, MhaCache, MhaGrads, MultiHead,
};
pub use autoencoder::{ae_forward, train_autoencoder, AeConfig, AutoencoderModel};
pub use separation::{class_marginal, separation_loss, SeparationConfig, SeparationHead};
pub use tokenizer::{mask_fields, masked_count, FieldDef, FieldKind, Tokenizer};
pub use transformer::{
    batch_step, masked_accuracy, train_transformer_mlm, EncoderBlock, LayerNorm, MaskedRow,
    PoolRule, TransformerConfig, TransformerModel,
};

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::EncodedTable;
use crate::error::Result;

/// Per-row latent vectors with provenance.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    pub h: Array2<f64>,
    pub generator: String,
    pub config_hash: String,
}

impl EmbeddingMatrix {
    pub fn n_rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn all_finite(&self) -> bool {
        self.h.iter().all(|v| v.is_finite())
    }
}

/// A trained embedding generator.
pub enum Embedder {
    Autoencoder(AutoencoderModel),
    Transformer(TransformerModel),
}

impl Embedder {
    pub fn generator_tag(&self) -> &'static str {
        match self {
            Embedder::Autoencoder(_) => "autoencoder",
            Embedder::Transformer(_) => "transformer",
        }
    }

    pub fn loss_curve(&self) -> &[f64] {
        match self {
            Embedder::Autoencoder(m) => &m.loss_curve,
            Embedder::Transformer(m) => &m.loss_curve,
        }
    }
}

/// Extracts one embedding row per corpus row: the autoencoder's latent
/// vector, or the transformer's pooled contextual vector. Deterministic;
/// duplicate input rows produce identical embeddings.
pub fn extract_embeddings(
    model: &Embedder,
    table: &EncodedTable,
    config_hash: &str,
) -> Result<EmbeddingMatrix> {
    let trained = match model {
        Embedder::Autoencoder(m) => m.trained,
        Embedder::Transformer(m) => m.trained,
    };
    if !trained {
        log::warn!("extract_embeddings: model is untrained; embeddings will be random projections");
    }
    let h = match model {
        Embedder::Autoencoder(m) => m.encode(&table.x)?,
        Embedder::Transformer(m) => {
            let tokens = m.tokenizer.tokenize_table(table);
            let width = m.width();
            let rows: Vec<Result<Vec<f64>>> = tokens
                .par_iter()
                .map(|seq| Ok(m.row_embedding(seq)?.to_vec()))
                .collect();
            let mut h = Array2::zeros((table.n_rows(), width));
            for (r, row) in rows.into_iter().enumerate() {
                let row = row?;
                for (c, v) in row.into_iter().enumerate() {
                    h[[r, c]] = v;
                }
            }
            h
        }
    };
    Ok(EmbeddingMatrix {
        h,
        generator: model.generator_tag().to_string(),
        config_hash: config_hash.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic;
    use crate::nncore::TrainConfig;

    #[test]
    fn embeddings_have_one_row_per_input() {
        let table = make_synthetic(60, 0.5, 1).unwrap();
        let cfg = AeConfig {
            latent_dim: 3,
            train: TrainConfig {
                epochs: 3,
                batch_size: 16,
                learning_rate: 1e-3,
                seed: 0,
            },
            ..Default::default()
        };
        let model = train_autoencoder(&table.x, &cfg, None).unwrap();
        let emb = extract_embeddings(&Embedder::Autoencoder(model), &table, "h").unwrap();
        assert_eq!(emb.n_rows(), 60);
        assert_eq!(emb.dim(), 3);
        assert!(emb.all_finite());
    }

    #[test]
    fn duplicate_rows_embed_identically() {
        let mut table = make_synthetic(20, 0.5, 2).unwrap();
        let first = table.x.row(0).to_owned();
        table.x.row_mut(7).assign(&first);
        let cfg = AeConfig {
            latent_dim: 4,
            train: TrainConfig {
                epochs: 2,
                batch_size: 8,
                learning_rate: 1e-3,
                seed: 1,
            },
            ..Default::default()
        };
        let model = train_autoencoder(&table.x, &cfg, None).unwrap();
        let emb = extract_embeddings(&Embedder::Autoencoder(model), &table, "h").unwrap();
        for c in 0..emb.dim() {
            assert_eq!(emb.h[[0, c]], emb.h[[7, c]]);
        }
    }
}
