//! ROUGE-L scoring and experiment aggregation.

mod report;

pub use report::{
    aggregate, compare, read_records_csv, render_table, rescore, write_gains_by_technique, write_length_vs_gain,
    write_records_csv, round_cell, CategoryGain, ConditionSummary, EvalRecord, GainTable, LengthGainRow, MetricsError, Report,
    TableRow, TechniqueGainRow,
};

use serde::{Deserialize, Serialize};

/// Length of the longest common subsequence, in `O(min(|a|, |b|))` space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// Lowercased alphanumeric runs.
pub fn tokenize_for_rouge(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(lcs: usize, pred_len: usize, ref_len: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(lcs, pred_len);
        let recall = ratio(lcs, ref_len);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        RougeScore { precision, recall, f1 }
    }
}

/// Sentence-level ROUGE-L F1 against the best-matching reference (earliest on ties).
pub fn rouge_l<S: AsRef<str>>(prediction: &str, references: &[S]) -> RougeScore {
    let pred = tokenize_for_rouge(prediction);
    let mut best: Option<RougeScore> = None;
    for r in references {
        let reference = tokenize_for_rouge(r.as_ref());
        let score = RougeScore::from_counts(lcs_length(&pred, &reference), pred.len(), reference.len());
        if best.is_none_or(|b| score.f1 > b.f1) {
            best = Some(score);
        }
    }
    best.unwrap_or_default()
}
