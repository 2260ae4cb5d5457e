//! Cleaning and feature encoding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::parse::{RawTable, RawValue};
use crate::dataset::schema::{ColumnKind, FeatureSchema};
use crate::dataset::split::SplitIndex;
use crate::error::{Error, Result};

/// How one source column appears in the encoded matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockKind {
    OneHot { levels: Vec<String> },
    Continuous { mean: f64, std: f64 },
}

/// One contiguous block of encoded columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub column: String,
    pub start: usize,
    pub width: usize,
    pub kind: BlockKind,
}

/// Maps encoded-matrix columns back to source columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureLayout {
    pub blocks: Vec<FeatureBlock>,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.blocks.iter().map(|b| b.width).sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for block in &self.blocks {
            match &block.kind {
                BlockKind::Continuous { .. } => names.push(block.column.clone()),
                BlockKind::OneHot { levels } => {
                    names.extend(levels.iter().map(|l| format!("{}={}", block.column, l)))
                }
            }
        }
        names
    }

    /// Decodes a one-hot block back to its level index.
    pub fn decode_level(&self, row: &[f64], block: &FeatureBlock) -> Option<usize> {
        match &block.kind {
            BlockKind::OneHot { .. } => row[block.start..block.start + block.width]
                .iter()
                .position(|&v| v == 1.0),
            BlockKind::Continuous { .. } => None,
        }
    }
}

/// Numeric feature matrix with the target and the withheld sensitive column.
///
/// `s` never contributes columns to `x`; it is carried only so fairness can
/// be evaluated against the truth.
#[derive(Debug, Clone)]
pub struct EncodedTable {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub s: Vec<u8>,
    pub ids: Vec<u64>,
    pub layout: FeatureLayout,
}

impl EncodedTable {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.y.is_empty() {
            return 0.0;
        }
        self.y.iter().filter(|&&v| v == 1).count() as f64 / self.y.len() as f64
    }
}

/// Cleaning/encoding statistics surfaced to manifests and the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeReport {
    pub input_rows: usize,
    pub dropped_rows: usize,
    pub kept_rows: usize,
    pub positive_rate: f64,
    pub warnings: Vec<String>,
}

/// Drops rows containing any missing marker.
pub fn clean(raw: &RawTable) -> (RawTable, usize) {
    let kept: Vec<Vec<RawValue>> = raw
        .rows
        .iter()
        .filter(|row| !row.iter().any(|v| matches!(v, RawValue::Missing)))
        .cloned()
        .collect();
    let dropped = raw.rows.len() - kept.len();
    (
        RawTable {
            rows: kept,
            missing_cells: 0,
        },
        dropped,
    )
}

/// Encodes cleaned rows: one-hot categoricals, z-scored continuous columns.
///
/// Normalization statistics come from `stat_rows` (row positions into the
/// cleaned table); pass all rows when no holdout must be protected. A
/// zero-variance continuous column gets its std clamped to 1 with a warning.
pub fn encode(
    cleaned: &RawTable,
    schema: &FeatureSchema,
    stat_rows: &[usize],
) -> Result<(EncodedTable, Vec<String>)> {
    schema.validate()?;
    let n = cleaned.n_rows();
    let width = schema.encoded_width();
    let mut warnings = Vec::new();

    // Per-continuous-column stats over the designated rows.
    let mut stats: Vec<Option<(f64, f64)>> = vec![None; schema.n_columns()];
    for (ci, spec) in schema.columns.iter().enumerate() {
        if !matches!(spec.kind, ColumnKind::Continuous) {
            continue;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for &r in stat_rows {
            if let RawValue::Number(v) = cleaned.rows[r][ci] {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Schema(format!(
                "column '{}': no rows available for normalization statistics",
                spec.name
            )));
        }
        let mean = sum / count as f64;
        let var = stat_rows
            .iter()
            .filter_map(|&r| match cleaned.rows[r][ci] {
                RawValue::Number(v) => Some((v - mean) * (v - mean)),
                _ => None,
            })
            .sum::<f64>()
            / count as f64;
        let mut std = var.sqrt();
        if std < 1e-12 {
            warnings.push(format!(
                "column '{}' has zero variance; std clamped to 1",
                spec.name
            ));
            std = 1.0;
        }
        stats[ci] = Some((mean, std));
    }

    // Layout mirrors the schema order, skipping sensitive and target.
    let mut layout = FeatureLayout::default();
    let mut offset = 0usize;
    for (ci, spec) in schema.columns.iter().enumerate() {
        let (kind, w) = match &spec.kind {
            ColumnKind::Continuous => {
                let (mean, std) = stats[ci].expect("stats computed above");
                (BlockKind::Continuous { mean, std }, 1)
            }
            ColumnKind::Categorical { levels } => (
                BlockKind::OneHot {
                    levels: levels.clone(),
                },
                levels.len(),
            ),
            ColumnKind::Sensitive { .. } | ColumnKind::Target { .. } => continue,
        };
        layout.blocks.push(FeatureBlock {
            column: spec.name.clone(),
            start: offset,
            width: w,
            kind,
        });
        offset += w;
    }
    debug_assert_eq!(offset, width);

    let mut x = Array2::zeros((n, width));
    let mut y = vec![0u8; n];
    let mut s = vec![0u8; n];
    for (r, row) in cleaned.rows.iter().enumerate() {
        let mut block_iter = layout.blocks.iter();
        for (ci, spec) in schema.columns.iter().enumerate() {
            match (&spec.kind, &row[ci]) {
                (ColumnKind::Continuous, RawValue::Number(v)) => {
                    let block = block_iter.next().expect("layout matches schema");
                    if let BlockKind::Continuous { mean, std } = block.kind {
                        x[[r, block.start]] = (v - mean) / std;
                    }
                }
                (ColumnKind::Categorical { .. }, RawValue::Level(idx)) => {
                    let block = block_iter.next().expect("layout matches schema");
                    x[[r, block.start + *idx as usize]] = 1.0;
                }
                (ColumnKind::Sensitive { .. }, RawValue::Level(idx)) => s[r] = *idx as u8,
                (ColumnKind::Target { .. }, RawValue::Level(idx)) => y[r] = *idx as u8,
                (kind, value) => {
                    return Err(Error::Schema(format!(
                        "row {r}, column '{}': value {value:?} does not fit kind {kind:?}",
                        spec.name
                    )))
                }
            }
        }
    }

    Ok((
        EncodedTable {
            x,
            y,
            s,
            ids: (0..n as u64).collect(),
            layout,
        },
        warnings,
    ))
}

/// Drops rows with missing values, splits the remainder, and encodes with
/// normalization statistics taken from the train side of the split.
pub fn clean_and_encode(
    raw: &RawTable,
    schema: &FeatureSchema,
    test_frac: f64,
    seed: u64,
) -> Result<(EncodedTable, SplitIndex, EncodeReport)> {
    let (cleaned, dropped) = clean(raw);
    let split = crate::dataset::split::split(cleaned.n_rows(), test_frac, seed)?;
    let (table, warnings) = encode(&cleaned, schema, &split.train)?;
    let report = EncodeReport {
        input_rows: raw.n_rows(),
        dropped_rows: dropped,
        kept_rows: table.n_rows(),
        positive_rate: table.positive_rate(),
        warnings,
    };
    Ok((table, split, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse::parse_adult_text;
    use crate::dataset::schema::adult_schema;

    const ROWS: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, >50K
38, ?, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Female, 0, 0, 40, United-States, <=50K
53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Male, 0, 0, 40, United-States, <=50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
37, Private, 284582, Masters, 14, Married-civ-spouse, Exec-managerial, Wife, White, Female, 0, 0, 40, United-States, >50K";

    fn encoded_all() -> EncodedTable {
        let schema = adult_schema();
        let raw = parse_adult_text(ROWS, &schema).unwrap();
        let (cleaned, dropped) = clean(&raw);
        assert_eq!(dropped, 1);
        let all: Vec<usize> = (0..cleaned.n_rows()).collect();
        encode(&cleaned, &schema, &all).unwrap().0
    }

    #[test]
    fn missing_rows_are_dropped() {
        let t = encoded_all();
        assert_eq!(t.n_rows(), 5);
    }

    #[test]
    fn sensitive_column_contributes_no_features() {
        let t = encoded_all();
        assert_eq!(t.width(), adult_schema().encoded_width());
        assert!(t.layout.blocks.iter().all(|b| b.column != "sex"));
        assert_eq!(t.s, vec![0, 0, 0, 1, 1]);
        assert_eq!(t.y, vec![0, 1, 0, 0, 1]);
    }

    #[test]
    fn one_hot_blocks_sum_to_one() {
        let t = encoded_all();
        for r in 0..t.n_rows() {
            let row: Vec<f64> = t.x.row(r).to_vec();
            for block in &t.layout.blocks {
                if let BlockKind::OneHot { .. } = block.kind {
                    let sum: f64 = row[block.start..block.start + block.width].iter().sum();
                    assert_eq!(sum, 1.0, "block {}", block.column);
                }
            }
        }
    }

    #[test]
    fn one_hot_decodes_back_to_level() {
        let schema = adult_schema();
        let raw = parse_adult_text(ROWS, &schema).unwrap();
        let (cleaned, _) = clean(&raw);
        let all: Vec<usize> = (0..cleaned.n_rows()).collect();
        let (t, _) = encode(&cleaned, &schema, &all).unwrap();
        for (r, raw_row) in cleaned.rows.iter().enumerate() {
            let xrow: Vec<f64> = t.x.row(r).to_vec();
            let mut block_iter = t.layout.blocks.iter();
            for (ci, spec) in schema.columns.iter().enumerate() {
                match &spec.kind {
                    ColumnKind::Continuous => {
                        block_iter.next();
                    }
                    ColumnKind::Categorical { .. } => {
                        let block = block_iter.next().unwrap();
                        let decoded = t.layout.decode_level(&xrow, block).unwrap();
                        match raw_row[ci] {
                            RawValue::Level(idx) => assert_eq!(decoded, idx as usize),
                            _ => panic!("unexpected raw value"),
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn train_statistics_normalize_train_rows() {
        let schema = adult_schema();
        let raw = parse_adult_text(ROWS, &schema).unwrap();
        let (cleaned, _) = clean(&raw);
        let train = vec![0, 2, 3];
        let (t, _) = encode(&cleaned, &schema, &train).unwrap();
        for block in &t.layout.blocks {
            if let BlockKind::Continuous { .. } = block.kind {
                let vals: Vec<f64> = train.iter().map(|&r| t.x[[r, block.start]]).collect();
                let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
                let var: f64 =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                assert!(mean.abs() < 1e-6, "column {} mean {mean}", block.column);
                if var > 0.0 {
                    assert!((var.sqrt() - 1.0).abs() < 1e-6, "column {} std {}", block.column, var.sqrt());
                }
            }
        }
    }

    #[test]
    fn zero_variance_column_warns_and_clamps() {
        let schema = adult_schema();
        // Both rows share age 40 -> zero variance in "age" over stat rows.
        let rows = "\
40, Private, 1000, HS-grad, 9, Divorced, Sales, Unmarried, White, Male, 0, 0, 40, United-States, <=50K
40, Private, 2000, HS-grad, 9, Divorced, Sales, Unmarried, White, Female, 0, 0, 20, United-States, >50K";
        let raw = parse_adult_text(rows, &schema).unwrap();
        let (cleaned, _) = clean(&raw);
        let (t, warnings) = encode(&cleaned, &schema, &[0, 1]).unwrap();
        assert!(warnings.iter().any(|w| w.contains("age")));
        assert_eq!(t.x[[0, 0]], 0.0);
    }
}
