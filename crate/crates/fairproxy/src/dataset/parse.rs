//! Raw table parsing for the Adult CSV format.
//!
//! Handles both official file variants: comma separators with an optional
//! space, "?" missing markers, the "|1x3 Cross validator" comment line at the
//! top of the test file, and the trailing period on test-file income labels.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::schema::{ColumnKind, FeatureSchema};
use crate::error::{Error, Result};

/// One parsed cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawValue {
    Missing,
    Number(f64),
    /// Index into the column's vocabulary. For the sensitive and target
    /// columns this is already the 0/1 mapping.
    Level(u16),
}

/// Parsed rows plus ingest statistics.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub rows: Vec<Vec<RawValue>>,
    /// Count of cells that held the missing marker.
    pub missing_cells: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Parses one Adult-format line against the schema. `line_no` is 1-based and
/// used for diagnostics only.
pub fn parse_line(line: &str, schema: &FeatureSchema, line_no: usize) -> Result<(Vec<RawValue>, usize)> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != schema.n_columns() {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected {} fields, found {}", schema.n_columns(), fields.len()),
        });
    }
    let mut row = Vec::with_capacity(fields.len());
    let mut missing = 0usize;
    for (spec, &field) in schema.columns.iter().zip(&fields) {
        if field == schema.missing_marker {
            row.push(RawValue::Missing);
            missing += 1;
            continue;
        }
        let value = match &spec.kind {
            ColumnKind::Continuous => {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("column '{}': '{}' is not numeric", spec.name, field),
                })?;
                RawValue::Number(v)
            }
            ColumnKind::Categorical { levels } => {
                let idx = levels.iter().position(|l| l == field).ok_or_else(|| {
                    Error::Schema(format!(
                        "line {line_no}, column '{}': unknown level '{}'",
                        spec.name, field
                    ))
                })?;
                RawValue::Level(idx as u16)
            }
            ColumnKind::Sensitive { levels } => {
                let idx = levels.iter().position(|l| l == field).ok_or_else(|| {
                    Error::Schema(format!(
                        "line {line_no}, column '{}': unknown level '{}'",
                        spec.name, field
                    ))
                })?;
                RawValue::Level(idx as u16)
            }
            ColumnKind::Target { negative, positive } => {
                // The official test file suffixes labels with a period.
                let label = field.strip_suffix('.').unwrap_or(field);
                if label == positive {
                    RawValue::Level(1)
                } else if label == negative {
                    RawValue::Level(0)
                } else {
                    return Err(Error::Schema(format!(
                        "line {line_no}, column '{}': unknown label '{}'",
                        spec.name, field
                    )));
                }
            }
        };
        row.push(value);
    }
    Ok((row, missing))
}

/// Parses Adult CSV text. Blank lines and lines starting with '|' are
/// skipped; line numbers in errors refer to the original text.
pub fn parse_adult_text(text: &str, schema: &FeatureSchema) -> Result<RawTable> {
    schema.validate()?;
    let mut rows = Vec::new();
    let mut missing_cells = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('|') {
            continue;
        }
        let (row, missing) = parse_line(line, schema, i + 1)?;
        missing_cells += missing;
        rows.push(row);
    }
    Ok(RawTable { rows, missing_cells })
}

/// Ingests one Adult CSV file.
pub fn ingest_adult(path: &Path, schema: &FeatureSchema) -> Result<RawTable> {
    let text = std::fs::read_to_string(path)?;
    let table = parse_adult_text(&text, schema)?;
    log::info!(
        "ingested {}: {} rows, {} missing cells",
        path.display(),
        table.n_rows(),
        table.missing_cells
    );
    Ok(table)
}

/// Ingests and concatenates several Adult CSV files (train + test variants).
pub fn ingest_adult_files(paths: &[&Path], schema: &FeatureSchema) -> Result<RawTable> {
    let mut rows = Vec::new();
    let mut missing_cells = 0usize;
    for path in paths {
        let table = ingest_adult(path, schema)?;
        missing_cells += table.missing_cells;
        rows.extend(table.rows);
    }
    Ok(RawTable { rows, missing_cells })
}

/// Renders a row back to the canonical comma+space text form (used by tests
/// and artifact sidecars).
pub fn render_row(row: &[RawValue], schema: &FeatureSchema) -> String {
    let mut out = String::new();
    for (i, (spec, value)) in schema.columns.iter().zip(row).enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match (value, &spec.kind) {
            (RawValue::Missing, _) => out.push_str(&schema.missing_marker),
            (RawValue::Number(v), _) => {
                let _ = write!(out, "{v}");
            }
            (RawValue::Level(idx), ColumnKind::Categorical { levels }) => {
                out.push_str(&levels[*idx as usize])
            }
            (RawValue::Level(idx), ColumnKind::Sensitive { levels }) => {
                out.push_str(&levels[*idx as usize])
            }
            (RawValue::Level(idx), ColumnKind::Target { negative, positive }) => {
                out.push_str(if *idx == 1 { positive } else { negative })
            }
            (RawValue::Level(_), ColumnKind::Continuous) => out.push_str("<invalid>"),
        }
    }
    out
}
