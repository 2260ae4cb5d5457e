//! Dataset ingestion, encoding, splits, and synthetic oracles.
//!
//! The Adult Income CSV is parsed against a fixed schema, rows with missing
//! markers are dropped, categoricals are one-hot encoded and continuous
//! columns z-scored with train-split statistics. The sensitive column never
//! enters the feature matrix; it rides along for evaluation only.

mod encode;
mod parse;
mod schema;
mod split;
mod synthetic;

pub use encode::{
    clean, clean_and_encode, encode, BlockKind, EncodeReport, EncodedTable, FeatureBlock,
    FeatureLayout,
};
pub use parse::{ingest_adult, ingest_adult_files, parse_adult_text, render_row, RawTable, RawValue};
pub use schema::{adult_schema, ColumnKind, ColumnSpec, FeatureSchema};
pub use split::{split, SplitIndex};
pub use synthetic::{make_synthetic, make_synthetic_with, SyntheticConfig};

/// Splits an encoded table's rows; convenience over [`split`].
pub fn split_table(table: &EncodedTable, test_frac: f64, seed: u64) -> crate::Result<SplitIndex> {
    split(table.n_rows(), test_frac, seed)
}
