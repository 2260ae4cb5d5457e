//! Row tokenization for the masked-field transformer.
//!
//! Every field owns a private vocabulary: categorical levels map to their
//! level index, continuous values are quantile-binned into `bins` bins over
//! the fitting rows (right-closed boundaries). Each field vocabulary is
//! extended with a dedicated UNK token and a dedicated MASK token. A row
//! tokenizes to CLS followed by one token per field.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{BlockKind, EncodedTable};
use crate::error::{Error, Result};

/// Value domain of one tokenized field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldKind {
    Categorical { n_levels: usize },
    /// Inner quantile edges (len = bins - 1), right-closed bins.
    Binned { edges: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDef {
    pub column: String,
    pub kind: FieldKind,
}

impl FieldDef {
    /// Base vocabulary size (values only, before UNK and MASK).
    pub fn n_values(&self) -> usize {
        match &self.kind {
            FieldKind::Categorical { n_levels } => *n_levels,
            FieldKind::Binned { edges } => edges.len() + 1,
        }
    }

    pub fn unk_id(&self) -> u32 {
        self.n_values() as u32
    }

    pub fn mask_id(&self) -> u32 {
        self.n_values() as u32 + 1
    }

    /// Full vocabulary size including UNK and MASK.
    pub fn vocab_size(&self) -> usize {
        self.n_values() + 2
    }
}

/// Per-field vocabularies fitted on a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub fields: Vec<FieldDef>,
    pub bins: usize,
}

/// Quantile of sorted data with linear interpolation.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

impl Tokenizer {
    /// Fits vocabularies from the encoded table's layout: one-hot blocks keep
    /// their level sets, continuous blocks get quantile edges computed over
    /// `fit_rows`.
    pub fn fit(table: &EncodedTable, bins: usize, fit_rows: &[usize]) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Config(format!("tokenizer: bins must be >= 2, got {bins}")));
        }
        if fit_rows.is_empty() {
            return Err(Error::Config("tokenizer: no rows to fit on".into()));
        }
        let mut fields = Vec::with_capacity(table.layout.blocks.len());
        for block in &table.layout.blocks {
            let kind = match &block.kind {
                BlockKind::OneHot { levels } => FieldKind::Categorical {
                    n_levels: levels.len(),
                },
                BlockKind::Continuous { .. } => {
                    let mut values: Vec<f64> =
                        fit_rows.iter().map(|&r| table.x[[r, block.start]]).collect();
                    values.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
                    let edges = (1..bins)
                        .map(|k| quantile(&values, k as f64 / bins as f64))
                        .collect();
                    FieldKind::Binned { edges }
                }
            };
            fields.push(FieldDef {
                column: block.column.clone(),
                kind,
            });
        }
        Ok(Tokenizer { fields, bins })
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Sequence length: CLS plus one token per field.
    pub fn seq_len(&self) -> usize {
        self.n_fields() + 1
    }

    /// Tokenizes one encoded row. Position 0 is the CLS placeholder (always
    /// token 0); position t >= 1 indexes field t-1's vocabulary. Values that
    /// decode to no known level become the field's UNK token.
    pub fn tokenize_row(&self, row: &[f64], table: &EncodedTable) -> Vec<u32> {
        let mut tokens = Vec::with_capacity(self.seq_len());
        tokens.push(0);
        for (field, block) in self.fields.iter().zip(&table.layout.blocks) {
            let tok = match &field.kind {
                FieldKind::Categorical { n_levels } => {
                    match table.layout.decode_level(row, block) {
                        Some(level) if level < *n_levels => level as u32,
                        _ => field.unk_id(),
                    }
                }
                FieldKind::Binned { edges } => {
                    let v = row[block.start];
                    if v.is_finite() {
                        edges.iter().filter(|&&e| v > e).count() as u32
                    } else {
                        field.unk_id()
                    }
                }
            };
            tokens.push(tok);
        }
        tokens
    }

    /// Tokenizes every row of a table.
    pub fn tokenize_table(&self, table: &EncodedTable) -> Vec<Vec<u32>> {
        (0..table.n_rows())
            .map(|r| {
                let row: Vec<f64> = table.x.row(r).to_vec();
                self.tokenize_row(&row, table)
            })
            .collect()
    }
}

/// Number of fields masked per row at the given rate.
pub fn masked_count(n_fields: usize, rate: f64) -> usize {
    ((n_fields as f64 * rate).round() as usize).max(1)
}

fn mask_stream(seed: u64, row_id: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"mask");
    hasher.update(row_id.to_le_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest")))
}

/// Replaces a deterministic subset of field positions with their MASK token.
///
/// Exactly `max(1, round(rate * F))` field positions are masked; CLS never
/// is. The choice depends only on (row_id, seed).
pub fn mask_fields(
    tokens: &[u32],
    tokenizer: &Tokenizer,
    rate: f64,
    seed: u64,
    row_id: u64,
) -> (Vec<u32>, Vec<usize>) {
    let n_fields = tokenizer.n_fields();
    debug_assert_eq!(tokens.len(), n_fields + 1);
    let n_mask = masked_count(n_fields, rate).min(n_fields);
    let mut rng = mask_stream(seed, row_id);
    let mut positions: Vec<usize> = (1..=n_fields).collect();
    positions.shuffle(&mut rng);
    positions.truncate(n_mask);
    positions.sort_unstable();
    let mut masked = tokens.to_vec();
    for &p in &positions {
        masked[p] = tokenizer.fields[p - 1].mask_id();
    }
    (masked, positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic;

    fn table_and_tokenizer() -> (EncodedTable, Tokenizer) {
        let table = make_synthetic(500, 0.5, 3).unwrap();
        let rows: Vec<usize> = (0..table.n_rows()).collect();
        let tok = Tokenizer::fit(&table, 10, &rows).unwrap();
        (table, tok)
    }

    #[test]
    fn sequence_is_cls_plus_fields() {
        let (table, tok) = table_and_tokenizer();
        let row: Vec<f64> = table.x.row(0).to_vec();
        let seq = tok.tokenize_row(&row, &table);
        assert_eq!(seq.len(), table.layout.blocks.len() + 1);
    }

    #[test]
    fn median_lands_in_middle_bin() {
        let (table, tok) = table_and_tokenizer();
        // Bin of the empirical median must be 4 or 5 under right-closed edges.
        let mut values: Vec<f64> = (0..table.n_rows()).map(|r| table.x[[r, 0]]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = quantile(&values, 0.5);
        if let FieldKind::Binned { edges } = &tok.fields[0].kind {
            let bin = edges.iter().filter(|&&e| median > e).count();
            assert!(bin == 4 || bin == 5, "median bin {bin}");
        } else {
            panic!("field 0 should be binned");
        }
    }

    #[test]
    fn unknown_value_maps_to_unk() {
        let (table, tok) = table_and_tokenizer();
        let mut row: Vec<f64> = table.x.row(0).to_vec();
        row[0] = f64::NAN;
        let seq = tok.tokenize_row(&row, &table);
        assert_eq!(seq[1], tok.fields[0].unk_id());
    }

    #[test]
    fn mask_count_guard() {
        assert_eq!(masked_count(14, 0.15), 2);
        assert_eq!(masked_count(2, 0.15), 1);
    }

    #[test]
    fn masking_is_deterministic_and_skips_cls() {
        let (table, tok) = table_and_tokenizer();
        let row: Vec<f64> = table.x.row(7).to_vec();
        let seq = tok.tokenize_row(&row, &table);
        let (m1, p1) = mask_fields(&seq, &tok, 0.15, 42, 7);
        let (m2, p2) = mask_fields(&seq, &tok, 0.15, 42, 7);
        assert_eq!(m1, m2);
        assert_eq!(p1, p2);
        assert!(!p1.contains(&0));
        assert_eq!(p1.len(), masked_count(tok.n_fields(), 0.15));
        for &p in &p1 {
            assert_eq!(m1[p], tok.fields[p - 1].mask_id());
        }
        // A different row id produces a different mask with high probability.
        let (_, p3) = mask_fields(&seq, &tok, 0.15, 42, 8);
        let (_, p4) = mask_fields(&seq, &tok, 0.15, 43, 7);
        assert!(p1 != p3 || p1 != p4);
    }
}
