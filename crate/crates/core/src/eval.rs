//! Scoring predictions against ground truth.
//!
//! A prediction is correct when its relation equals the ground-truth
//! relation for the same `(table_id, column_index)`. Precision divides by
//! submitted (non-blank) predictions, recall by ground-truth rows, so blank
//! predictions cost recall only. Macro F1 averages per-class F1 over the
//! classes present in the ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{ColumnRef, GroundTruth, RelationLabel, TableError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed predictions: {0}")]
    Malformed(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// One row of a predictions file; `relation` is `None` for a blank field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub column: ColumnRef,
    pub relation: Option<RelationLabel>,
}

impl Prediction {
    pub fn new(table_id: &str, column_index: usize, relation: Option<&str>) -> Self {
        Self {
            column: ColumnRef {
                table_id: table_id.to_string(),
                column_index,
            },
            relation: relation.and_then(|r| RelationLabel::new(r).ok()),
        }
    }
}

/// Reads `table_id,column_index,relation` rows; a header line is optional.
pub fn read_predictions(raw: impl Read) -> Result<Vec<Prediction>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(raw);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| EvalError::Malformed(e.to_string()))?;
        let field = |k: usize| record.get(k).unwrap_or("").trim();
        let Ok(column_index) = field(1).parse::<usize>() else {
            if i == 0 {
                continue;
            }
            return Err(EvalError::Malformed(format!(
                "line {}: column index `{}` is not a number",
                i + 1,
                field(1)
            )));
        };
        let table_id = field(0);
        if table_id.is_empty() {
            return Err(EvalError::Malformed(format!("line {}: empty table id", i + 1)));
        }
        let relation = match field(2) {
            "" => None,
            r => Some(RelationLabel::new(r)?),
        };
        out.push(Prediction {
            column: ColumnRef {
                table_id: table_id.to_string(),
                column_index,
            },
            relation,
        });
    }
    Ok(out)
}

pub fn read_predictions_file(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_predictions(file)
}

/// Sums `latency_seconds` over a trace log.
pub fn trace_seconds(path: &Path) -> Result<f64, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut total = 0.0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| EvalError::Malformed(format!("{} line {}: {e}", path.display(), i + 1)))?;
        total += value["latency_seconds"].as_f64().unwrap_or(0.0);
    }
    Ok(total)
}

/// A row excluded from scoring.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalIssue {
    /// Several rows for one key; all of them are dropped.
    DuplicatePrediction {
        table_id: String,
        column_index: usize,
        rows: usize,
    },
    /// A prediction for a column that is not a target.
    UnknownKey { table_id: String, column_index: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth rows of this class.
    pub support: usize,
    /// Submitted predictions of this class.
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_class: BTreeMap<RelationLabel, ClassScore>,
    /// Target columns with a blank prediction.
    pub failed_iterations: usize,
    pub mean_seconds_per_column: f64,
    pub total_seconds: f64,
    pub targets: usize,
    pub submitted: usize,
    pub correct: usize,
    pub issues: Vec<EvalIssue>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

/// Scores `predictions` against the labeled rows of `truth`.
pub fn evaluate(predictions: &[Prediction], truth: &GroundTruth) -> EvalReport {
    let gold: BTreeMap<&ColumnRef, &RelationLabel> =
        truth.iter().filter_map(|(k, r)| r.map(|r| (k, r))).collect();

    let mut by_key: BTreeMap<&ColumnRef, Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        by_key.entry(&p.column).or_default().push(p);
    }

    let mut issues = Vec::new();
    let mut valid: Vec<(&ColumnRef, Option<&RelationLabel>)> = Vec::new();
    for (key, rows) in &by_key {
        if rows.len() > 1 {
            issues.push(EvalIssue::DuplicatePrediction {
                table_id: key.table_id.clone(),
                column_index: key.column_index,
                rows: rows.len(),
            });
        } else if !gold.contains_key(key) {
            issues.push(EvalIssue::UnknownKey {
                table_id: key.table_id.clone(),
                column_index: key.column_index,
            });
        } else {
            valid.push((key, rows[0].relation.as_ref()));
        }
    }
    for issue in &issues {
        log::warn!("excluded from scoring: {issue:?}");
    }

    let mut per_class: BTreeMap<RelationLabel, ClassScore> = BTreeMap::new();
    for r in gold.values() {
        per_class.entry((*r).clone()).or_default().support += 1;
    }
    let mut submitted = 0;
    let mut correct = 0;
    let mut failed_iterations = 0;
    for (key, relation) in valid {
        let Some(relation) = relation else {
            failed_iterations += 1;
            continue;
        };
        submitted += 1;
        let entry = per_class.entry(relation.clone()).or_default();
        entry.predicted += 1;
        if gold[key] == relation {
            correct += 1;
            entry.correct += 1;
        }
    }

    let mut f1_sum = 0.0;
    let mut gold_classes = 0;
    for score in per_class.values_mut() {
        score.precision = ratio(score.correct, score.predicted);
        score.recall = ratio(score.correct, score.support);
        score.f1 = f1(score.precision, score.recall);
        if score.support > 0 {
            f1_sum += score.f1;
            gold_classes += 1;
        }
    }

    let precision = ratio(correct, submitted);
    let recall = ratio(correct, gold.len());
    EvalReport {
        micro_f1: f1(precision, recall),
        macro_f1: if gold_classes == 0 {
            0.0
        } else {
            f1_sum / gold_classes as f64
        },
        precision,
        recall,
        per_class,
        failed_iterations,
        mean_seconds_per_column: 0.0,
        total_seconds: 0.0,
        targets: gold.len(),
        submitted,
        correct,
        issues,
    }
}

impl EvalReport {
    /// Attaches run time; the mean is per target column.
    pub fn with_seconds(mut self, total_seconds: f64) -> Self {
        self.total_seconds = total_seconds;
        self.mean_seconds_per_column = if self.targets == 0 {
            0.0
        } else {
            total_seconds / self.targets as f64
        };
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    /// `Macro_F1  Micro_F1  P  R  Time` rows, one per named report.
    pub fn comparison_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a EvalReport)>) -> String {
        let rows: Vec<(&str, &EvalReport)> = rows.into_iter().collect();
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(3);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}  {:>6}  {:>6}  {:>8}\n",
            "run", "Macro_F1", "Micro_F1", "P", "R", "Time(s)"
        );
        for (name, r) in rows {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>8.3}  {:>8.3}  {:>6.3}  {:>6.3}  {:>8.3}",
                r.macro_f1, r.micro_f1, r.precision, r.recall, r.mean_seconds_per_column
            );
        }
        out
    }
}

/// Classes predicted at least once and never wrongly.
pub fn compute_precision_gate(report: &EvalReport) -> BTreeSet<RelationLabel> {
    report
        .per_class
        .iter()
        .filter(|(_, s)| s.predicted > 0 && s.correct == s.predicted)
        .map(|(r, _)| r.clone())
        .collect()
}
