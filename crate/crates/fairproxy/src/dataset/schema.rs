//! Column schemas for tabular datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role and value domain of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Categorical { levels: Vec<String> },
    /// Withheld from features; retained for evaluation. `levels[1]` maps to 1.
    Sensitive { levels: [String; 2] },
    /// Binary prediction target. `positive` maps to 1.
    Target { negative: String, positive: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Schema for a raw table: per-column kinds plus the missing-value marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub missing_marker: String,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        let targets = self
            .columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Target { .. }))
            .count();
        let sensitive = self
            .columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Sensitive { .. }))
            .count();
        if targets != 1 {
            return Err(Error::Schema(format!("expected exactly one target column, found {targets}")));
        }
        if sensitive != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one sensitive column, found {sensitive}"
            )));
        }
        for col in &self.columns {
            let levels: &[String] = match &col.kind {
                ColumnKind::Categorical { levels } => levels,
                ColumnKind::Sensitive { levels } => levels,
                _ => &[],
            };
            if levels.iter().any(|l| *l == self.missing_marker) {
                return Err(Error::Schema(format!(
                    "column '{}' vocabulary contains the missing marker",
                    col.name
                )));
            }
        }
        Ok(())
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Width of the encoded feature matrix: one column per categorical level
    /// plus one per continuous column. The sensitive column contributes zero.
    pub fn encoded_width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match &c.kind {
                ColumnKind::Continuous => 1,
                ColumnKind::Categorical { levels } => levels.len(),
                ColumnKind::Sensitive { .. } | ColumnKind::Target { .. } => 0,
            })
            .sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

fn cat(name: &str, levels: &[&str]) -> ColumnSpec {
    ColumnSpec {
        name: name.to_string(),
        kind: ColumnKind::Categorical {
            levels: levels.iter().map(|s| s.to_string()).collect(),
        },
    }
}

fn cont(name: &str) -> ColumnSpec {
    ColumnSpec {
        name: name.to_string(),
        kind: ColumnKind::Continuous,
    }
}

/// The UCI Adult Income schema: 14 attributes plus the income target.
/// Gender is the sensitive attribute (Female maps to 1) and is withheld from
/// the feature matrix; income ">50K" maps to 1.
pub fn adult_schema() -> FeatureSchema {
    FeatureSchema {
        missing_marker: "?".to_string(),
        columns: vec![
            cont("age"),
            cat(
                "workclass",
                &[
                    "Private",
                    "Self-emp-not-inc",
                    "Self-emp-inc",
                    "Federal-gov",
                    "Local-gov",
                    "State-gov",
                    "Without-pay",
                    "Never-worked",
                ],
            ),
            cont("fnlwgt"),
            cat(
                "education",
                &[
                    "Bachelors",
                    "Some-college",
                    "11th",
                    "HS-grad",
                    "Prof-school",
                    "Assoc-acdm",
                    "Assoc-voc",
                    "9th",
                    "7th-8th",
                    "12th",
                    "Masters",
                    "1st-4th",
                    "10th",
                    "Doctorate",
                    "5th-6th",
                    "Preschool",
                ],
            ),
            cont("education-num"),
            cat(
                "marital-status",
                &[
                    "Married-civ-spouse",
                    "Divorced",
                    "Never-married",
                    "Separated",
                    "Widowed",
                    "Married-spouse-absent",
                    "Married-AF-spouse",
                ],
            ),
            cat(
                "occupation",
                &[
                    "Tech-support",
                    "Craft-repair",
                    "Other-service",
                    "Sales",
                    "Exec-managerial",
                    "Prof-specialty",
                    "Handlers-cleaners",
                    "Machine-op-inspct",
                    "Adm-clerical",
                    "Farming-fishing",
                    "Transport-moving",
                    "Priv-house-serv",
                    "Protective-serv",
                    "Armed-Forces",
                ],
            ),
            cat(
                "relationship",
                &[
                    "Wife",
                    "Own-child",
                    "Husband",
                    "Not-in-family",
                    "Other-relative",
                    "Unmarried",
                ],
            ),
            cat(
                "race",
                &[
                    "White",
                    "Asian-Pac-Islander",
                    "Amer-Indian-Eskimo",
                    "Other",
                    "Black",
                ],
            ),
            ColumnSpec {
                name: "sex".to_string(),
                kind: ColumnKind::Sensitive {
                    levels: ["Male".to_string(), "Female".to_string()],
                },
            },
            cont("capital-gain"),
            cont("capital-loss"),
            cont("hours-per-week"),
            cat(
                "native-country",
                &[
                    "United-States",
                    "Cambodia",
                    "England",
                    "Puerto-Rico",
                    "Canada",
                    "Germany",
                    "Outlying-US(Guam-USVI-etc)",
                    "India",
                    "Japan",
                    "Greece",
                    "South",
                    "China",
                    "Cuba",
                    "Iran",
                    "Honduras",
                    "Philippines",
                    "Italy",
                    "Poland",
                    "Jamaica",
                    "Vietnam",
                    "Mexico",
                    "Portugal",
                    "Ireland",
                    "France",
                    "Dominican-Republic",
                    "Laos",
                    "Ecuador",
                    "Taiwan",
                    "Haiti",
                    "Columbia",
                    "Hungary",
                    "Guatemala",
                    "Nicaragua",
                    "Scotland",
                    "Thailand",
                    "Yugoslavia",
                    "El-Salvador",
                    "Trinadad&Tobago",
                    "Peru",
                    "Hong",
                    "Holand-Netherlands",
                ],
            ),
            ColumnSpec {
                name: "income".to_string(),
                kind: ColumnKind::Target {
                    negative: "<=50K".to_string(),
                    positive: ">50K".to_string(),
                },
            },
        ],
    }
}
