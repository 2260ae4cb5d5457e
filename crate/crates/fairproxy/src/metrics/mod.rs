//! Classification and fairness metrics.
//!
//! SPD is the absolute gap in positive-prediction rates between the two
//! groups; the equalized-odds difference averages the absolute FPR and FNR
//! gaps. Both use hard labels at threshold 0.5. Average precision ranks by
//! raw score. Undefined group rates raise errors rather than returning 0 —
//! a silent zero would fake fairness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions joined with ground truth and the true group, as needed by the
/// fairness metrics.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub y_hard: Vec<u8>,
    pub score: Vec<f64>,
    pub y_true: Vec<u8>,
    pub group: Vec<u8>,
}

impl PredictionSet {
    /// Builds a prediction set from raw scores, thresholding at 0.5.
    pub fn from_scores(score: Vec<f64>, y_true: Vec<u8>, group: Vec<u8>) -> Result<Self> {
        let y_hard = score.iter().map(|&s| u8::from(s >= 0.5)).collect();
        let set = PredictionSet {
            y_hard,
            score,
            y_true,
            group,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.y_hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hard.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y_hard.len();
        if self.score.len() != n || self.y_true.len() != n || self.group.len() != n {
            return Err(Error::shape(
                "prediction_set",
                format!("{n} rows"),
                format!(
                    "scores {}, labels {}, groups {}",
                    self.score.len(),
                    self.y_true.len(),
                    self.group.len()
                ),
            ));
        }
        for v in self.y_hard.iter().chain(&self.y_true).chain(&self.group) {
            if *v > 1 {
                return Err(Error::Schema(format!("binary field holds {v}")));
            }
        }
        Ok(())
    }
}

/// Per-group confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    fn positives(&self) -> usize {
        self.tp + self.fn_
    }
    fn negatives(&self) -> usize {
        self.fp + self.tn
    }
    fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn group_confusions(set: &PredictionSet) -> [Confusion; 2] {
    let mut conf = [Confusion::default(), Confusion::default()];
    for i in 0..set.len() {
        let c = &mut conf[set.group[i] as usize];
        match (set.y_hard[i], set.y_true[i]) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => unreachable!("validated binary fields"),
        }
    }
    conf
}

/// Statistical parity difference: |P(Y_hat=1 | S=0) - P(Y_hat=1 | S=1)|.
pub fn spd(set: &PredictionSet) -> Result<f64> {
    set.validate()?;
    let conf = group_confusions(set);
    for (g, c) in conf.iter().enumerate() {
        if c.total() == 0 {
            return Err(Error::Undefined(format!("SPD: group {g} is empty")));
        }
    }
    let rate = |c: &Confusion| (c.tp + c.fp) as f64 / c.total() as f64;
    Ok((rate(&conf[0]) - rate(&conf[1])).abs())
}

/// Equalized-odds differences: (dFPR, dFNR, EOD) with EOD = (dFPR + dFNR) / 2.
pub fn eod(set: &PredictionSet) -> Result<(f64, f64, f64)> {
    set.validate()?;
    let conf = group_confusions(set);
    for (g, c) in conf.iter().enumerate() {
        if c.negatives() == 0 {
            return Err(Error::Undefined(format!(
                "EOD: FPR undefined, group {g} has no negative ground-truth rows"
            )));
        }
        if c.positives() == 0 {
            return Err(Error::Undefined(format!(
                "EOD: FNR undefined, group {g} has no positive ground-truth rows"
            )));
        }
    }
    let fpr = |c: &Confusion| c.fp as f64 / c.negatives() as f64;
    let fnr = |c: &Confusion| c.fn_ as f64 / c.positives() as f64;
    let dfpr = (fpr(&conf[1]) - fpr(&conf[0])).abs();
    let dfnr = (fnr(&conf[1]) - fnr(&conf[0])).abs();
    Ok((dfpr, dfnr, (dfpr + dfnr) / 2.0))
}

/// Average precision: the mean of precision evaluated at each positive in
/// score-descending order. Ties keep their original order (stable sort).
pub fn average_precision(scores: &[f64], y_true: &[u8]) -> Result<f64> {
    if scores.len() != y_true.len() {
        return Err(Error::shape(
            "average_precision",
            format!("{}", scores.len()),
            format!("{}", y_true.len()),
        ));
    }
    let n_pos = y_true.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(Error::Undefined("AP: no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut seen_pos = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if y_true[i] == 1 {
            seen_pos += 1;
            total += seen_pos as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Where a model's group signal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupProvenance {
    /// Trained without any group signal.
    None,
    /// Trained on the true sensitive attribute.
    True,
    /// Trained on cluster-derived proxy labels.
    Proxy,
}

/// Full evaluation output, serialized with fixed key names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairnessReport {
    pub ap: f64,
    pub spd: f64,
    pub dfpr: f64,
    pub dfnr: f64,
    pub eod: f64,
    pub group_sizes: [usize; 2],
    pub confusion: [Confusion; 2],
    pub provenance: GroupProvenance,
}

/// Assembles the full report; evaluation always uses the true sensitive
/// labels regardless of what the model was trained with.
pub fn evaluate(set: &PredictionSet, provenance: GroupProvenance) -> Result<FairnessReport> {
    let spd_v = spd(set)?;
    let (dfpr, dfnr, eod_v) = eod(set)?;
    let ap = average_precision(&set.score, &set.y_true)?;
    let confusion = group_confusions(set);
    Ok(FairnessReport {
        ap,
        spd: spd_v,
        dfpr,
        dfnr,
        eod: eod_v,
        group_sizes: [confusion[0].total(), confusion[1].total()],
        confusion,
        provenance,
    })
}

/// Renders result rows as a markdown table with AP/SPD/EOD columns.
pub fn markdown_table(title: &str, rows: &[(String, f64, f64, f64)]) -> String {
    let mut out = format!("### {title}\n\n");
    out.push_str("| Configuration | Average Precision | SPD | EOD |\n");
    out.push_str("|---|---|---|---|\n");
    for (name, ap, spd, eod) in rows {
        out.push_str(&format!("| {name} | {ap:.3} | {spd:.3} | {eod:.3} |\n"));
    }
    out
}
