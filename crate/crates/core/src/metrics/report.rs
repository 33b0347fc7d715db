use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{rouge_l, RougeScore};
use crate::reframe::TechniqueTag;
use crate::schema::TaskCategory;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("condition `{0}` is not in the report")]
    MissingBaseline(String),
    #[error("no records to aggregate")]
    NoRecords,
    #[error("record {0} has no references")]
    NoReferences(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// One scored prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub category: TaskCategory,
    pub condition: String,
    pub instance_id: String,
    pub prediction: String,
    pub references: Vec<String>,
    pub score: RougeScore,
    pub prompt_token_count: usize,
    pub instruction_token_count: usize,
    pub encoding_id: u8,
    pub example_count: usize,
    pub techniques: Vec<TechniqueTag>,
    /// Set when the backend failed; such records score zero and still count.
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    task_id: String,
    category: TaskCategory,
    condition: String,
    instance_id: String,
    encoding_id: u8,
    example_count: usize,
    prompt_token_count: usize,
    instruction_token_count: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    techniques: String,
    error: String,
    prediction: String,
    references: String,
}

impl From<&EvalRecord> for CsvRow {
    fn from(r: &EvalRecord) -> Self {
        CsvRow {
            task_id: r.task_id.clone(),
            category: r.category,
            condition: r.condition.clone(),
            instance_id: r.instance_id.clone(),
            encoding_id: r.encoding_id,
            example_count: r.example_count,
            prompt_token_count: r.prompt_token_count,
            instruction_token_count: r.instruction_token_count,
            precision: r.score.precision,
            recall: r.score.recall,
            f1: r.score.f1,
            techniques: r.techniques.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("|"),
            error: r.error.clone().unwrap_or_default(),
            prediction: r.prediction.clone(),
            references: serde_json::to_string(&r.references).expect("strings serialize"),
        }
    }
}

impl TryFrom<CsvRow> for EvalRecord {
    type Error = MetricsError;

    fn try_from(row: CsvRow) -> Result<Self, MetricsError> {
        let techniques = row
            .techniques
            .split('|')
            .filter(|s| !s.is_empty())
            .map(|s| TechniqueTag::parse(s).ok_or_else(|| MetricsError::Csv(format!("unknown technique `{s}`"))))
            .collect::<Result<_, _>>()?;
        let references: Vec<String> =
            serde_json::from_str(&row.references).map_err(|e| MetricsError::Csv(format!("references: {e}")))?;
        if references.is_empty() {
            return Err(MetricsError::NoReferences(row.instance_id));
        }
        Ok(EvalRecord {
            task_id: row.task_id,
            category: row.category,
            condition: row.condition,
            instance_id: row.instance_id,
            prediction: row.prediction,
            references,
            score: RougeScore { precision: row.precision, recall: row.recall, f1: row.f1 },
            prompt_token_count: row.prompt_token_count,
            instruction_token_count: row.instruction_token_count,
            encoding_id: row.encoding_id,
            example_count: row.example_count,
            techniques,
            error: Some(row.error).filter(|e| !e.is_empty()),
        })
    }
}

pub fn write_records_csv<W: Write>(out: W, records: &[EvalRecord]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow::from(r)).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<EvalRecord>, MetricsError> {
    csv::Reader::from_reader(input)
        .deserialize::<CsvRow>()
        .map(|row| row.map_err(|e| MetricsError::Csv(e.to_string())).and_then(EvalRecord::try_from))
        .collect()
}

/// Recomputes every score from prediction and references.
pub fn rescore(records: &mut [EvalRecord]) {
    for r in records {
        r.score = if r.error.is_some() { RougeScore::default() } else { rouge_l(&r.prediction, &r.references) };
    }
}

/// Order-independent mean: values are sorted before summation.
fn mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub name: String,
    /// Mean F1 x 100 per task.
    pub task_scores: BTreeMap<String, f64>,
    pub task_categories: BTreeMap<String, TaskCategory>,
    /// Mean instruction token count per task.
    pub instruction_tokens: BTreeMap<String, f64>,
    pub task_techniques: BTreeMap<String, Vec<TechniqueTag>>,
    pub category_scores: BTreeMap<TaskCategory, f64>,
    /// Unweighted mean of the category scores present.
    pub avg: f64,
    pub records: usize,
    pub errors: usize,
}

impl ConditionSummary {
    fn from_records(name: &str, records: &[&EvalRecord]) -> Self {
        let mut per_task: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
        for r in records {
            per_task.entry(&r.task_id).or_default().push(r);
        }
        let mut s = ConditionSummary {
            name: name.to_string(),
            task_scores: BTreeMap::new(),
            task_categories: BTreeMap::new(),
            instruction_tokens: BTreeMap::new(),
            task_techniques: BTreeMap::new(),
            category_scores: BTreeMap::new(),
            avg: 0.0,
            records: records.len(),
            errors: records.iter().filter(|r| r.error.is_some()).count(),
        };
        let mut per_category: BTreeMap<TaskCategory, Vec<f64>> = BTreeMap::new();
        for (task, rs) in per_task {
            let score = mean(rs.iter().map(|r| r.score.f1 * 100.0).collect());
            let techniques: BTreeSet<TechniqueTag> = rs.iter().flat_map(|r| r.techniques.iter().copied()).collect();
            s.task_scores.insert(task.to_string(), score);
            s.task_categories.insert(task.to_string(), rs[0].category);
            s.instruction_tokens.insert(task.to_string(), mean(rs.iter().map(|r| r.instruction_token_count as f64).collect()));
            s.task_techniques.insert(task.to_string(), techniques.into_iter().collect());
            per_category.entry(rs[0].category).or_default().push(score);
        }
        for (c, scores) in per_category {
            s.category_scores.insert(c, mean(scores));
        }
        s.avg = mean(s.category_scores.values().copied().collect());
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryGain {
    pub category: TaskCategory,
    pub baseline: Option<f64>,
    pub target: Option<f64>,
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub baseline: String,
    pub target: String,
    pub categories: Vec<CategoryGain>,
    pub avg_baseline: f64,
    pub avg_target: f64,
    pub avg_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthGainRow {
    pub condition: String,
    pub task: String,
    /// Baseline minus target instruction tokens.
    pub token_delta: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueGainRow {
    pub condition: String,
    pub technique: TechniqueTag,
    pub category: TaskCategory,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Sorted by condition name.
    pub conditions: Vec<ConditionSummary>,
    pub baseline: Option<String>,
    pub gains: Vec<GainTable>,
    pub length_vs_gain: Vec<LengthGainRow>,
    pub technique_gains: Vec<TechniqueGainRow>,
}

impl Report {
    pub fn condition(&self, name: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn error_count(&self) -> usize {
        self.conditions.iter().map(|c| c.errors).sum()
    }
}

/// Per-condition task, category and average scores, plus gains of every other
/// condition against `baseline` when one is given.
pub fn aggregate(records: &[EvalRecord], baseline: Option<&str>) -> Result<Report, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    if let Some(r) = records.iter().find(|r| r.references.is_empty()) {
        return Err(MetricsError::NoReferences(r.instance_id.clone()));
    }
    let mut by_condition: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_condition.entry(&r.condition).or_default().push(r);
    }
    let mut report = Report {
        conditions: by_condition.iter().map(|(name, rs)| ConditionSummary::from_records(name, rs)).collect(),
        baseline: baseline.map(str::to_string),
        gains: Vec::new(),
        length_vs_gain: Vec::new(),
        technique_gains: Vec::new(),
    };
    let Some(base_name) = baseline else { return Ok(report) };
    let base = report.condition(base_name).ok_or_else(|| MetricsError::MissingBaseline(base_name.to_string()))?.clone();

    for target in report.conditions.iter().filter(|c| c.name != base_name) {
        report.gains.push(compare(&report, base_name, &target.name)?);
        let mut per_key: BTreeMap<(TechniqueTag, TaskCategory), Vec<f64>> = BTreeMap::new();
        for (task, score) in &target.task_scores {
            let Some(base_score) = base.task_scores.get(task) else { continue };
            let gain = score - base_score;
            report.length_vs_gain.push(LengthGainRow {
                condition: target.name.clone(),
                task: task.clone(),
                token_delta: base.instruction_tokens[task] - target.instruction_tokens[task],
                gain,
            });
            for t in &target.task_techniques[task] {
                per_key.entry((*t, target.task_categories[task])).or_default().push(gain);
            }
        }
        for ((technique, category), gains) in per_key {
            report.technique_gains.push(TechniqueGainRow { condition: target.name.clone(), technique, category, gain: mean(gains) });
        }
    }
    Ok(report)
}

/// Per-category and average gains of `target` over `baseline`.
pub fn compare(report: &Report, baseline: &str, target: &str) -> Result<GainTable, MetricsError> {
    let b = report.condition(baseline).ok_or_else(|| MetricsError::MissingBaseline(baseline.to_string()))?;
    let t = report.condition(target).ok_or_else(|| MetricsError::MissingBaseline(target.to_string()))?;
    let categories = TaskCategory::ALL
        .iter()
        .map(|c| {
            let (bs, ts) = (b.category_scores.get(c).copied(), t.category_scores.get(c).copied());
            CategoryGain { category: *c, baseline: bs, target: ts, gain: bs.zip(ts).map(|(x, y)| y - x) }
        })
        .collect();
    Ok(GainTable {
        baseline: baseline.to_string(),
        target: target.to_string(),
        categories,
        avg_baseline: b.avg,
        avg_target: t.avg,
        avg_gain: t.avg - b.avg,
    })
}

/// One table line: category cells in column order and their average.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub cells: [Option<f64>; 6],
    pub avg: f64,
}

impl TableRow {
    pub fn from_category_scores(name: &str, scores: &[(TaskCategory, f64)]) -> Self {
        let mut cells = [None; 6];
        for (c, v) in scores {
            let i = TaskCategory::ALL.iter().position(|x| x == c).expect("closed enumeration");
            cells[i] = Some(*v);
        }
        let avg = mean(cells.iter().flatten().copied().collect());
        TableRow { name: name.to_string(), cells, avg }
    }

    pub fn from_summary(s: &ConditionSummary) -> Self {
        let scores: Vec<(TaskCategory, f64)> = s.category_scores.iter().map(|(c, v)| (*c, *v)).collect();
        TableRow { avg: s.avg, ..Self::from_category_scores(&s.name, &scores) }
    }
}

/// Half away from zero, as in the printed integer cells.
pub fn round_cell(v: f64) -> i64 {
    v.round() as i64
}

fn arrow(value: Option<f64>, base: Option<f64>) -> &'static str {
    match (value.map(round_cell), base.map(round_cell)) {
        (Some(v), Some(b)) if v > b => "↑",
        (Some(v), Some(b)) if v < b => "↓",
        _ => " ",
    }
}

/// Aligned integer table (QG..VF, Avg). Rows after `baseline` carry arrows
/// against it, and a gain line per row follows the table.
pub fn render_table(rows: &[TableRow], baseline: Option<usize>) -> String {
    let width = rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(9);
    let mut out = format!("{:<width$}", "condition");
    for c in TaskCategory::ALL {
        out.push_str(&format!(" {:>5} ", c.as_str()));
    }
    out.push_str(&format!(" {:>5}\n", "Avg"));
    let base = baseline.and_then(|i| rows.get(i));
    for (i, row) in rows.iter().enumerate() {
        let against = base.filter(|_| Some(i) != baseline);
        out.push_str(&format!("{:<width$}", row.name));
        for (k, cell) in row.cells.iter().enumerate() {
            let text = cell.map_or("-".to_string(), |v| round_cell(v).to_string());
            out.push_str(&format!(" {text:>5}{}", against.map_or(" ", |b| arrow(*cell, b.cells[k]))));
        }
        let a = against.map_or(" ", |b| arrow(Some(row.avg), Some(b.avg)));
        out.push_str(format!(" {:>5}{a}", round_cell(row.avg)).trim_end());
        out.push('\n');
    }
    if let Some(b) = base {
        let gains: Vec<&TableRow> = rows.iter().enumerate().filter(|(i, _)| Some(*i) != baseline).map(|(_, r)| r).collect();
        if !gains.is_empty() {
            out.push_str(&format!("\ngain vs {}\n", b.name));
        }
        for row in gains {
            out.push_str(&format!("{:<width$}", row.name));
            for (k, cell) in row.cells.iter().enumerate() {
                let g = cell.zip(b.cells[k]).map_or("-".to_string(), |(t, s)| format!("{:+}", round_cell(t - s)));
                out.push_str(&format!(" {g:>5} "));
            }
            out.push_str(&format!(" {:>5}\n", format!("{:+}", round_cell(row.avg - b.avg))));
        }
    }
    out
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Columns: condition, technique, category, gain.
pub fn write_gains_by_technique<W: Write>(out: W, report: &Report) -> Result<(), MetricsError> {
    if report.technique_gains.is_empty() {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["condition", "technique", "category", "gain"]).map_err(|e| MetricsError::Csv(e.to_string()))?;
        return w.flush().map_err(|e| MetricsError::Csv(e.to_string()));
    }
    write_rows(out, &report.technique_gains)
}

/// Columns: condition, task, token_delta, gain.
pub fn write_length_vs_gain<W: Write>(out: W, report: &Report) -> Result<(), MetricsError> {
    if report.length_vs_gain.is_empty() {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["condition", "task", "token_delta", "gain"]).map_err(|e| MetricsError::Csv(e.to_string()))?;
        return w.flush().map_err(|e| MetricsError::Csv(e.to_string()));
    }
    write_rows(out, &report.length_vs_gain)
}
