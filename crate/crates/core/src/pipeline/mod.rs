//! Decomposition specs: validation as a sequential dataflow and stepwise
//! execution against a completion backend.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{Backend, DecodingParams, LmRequest};
use crate::schema::{encode_prompt, Example, FieldMap, PromptEncoding, TaskCategory, TaskInstruction};

/// Where a subtask input (or a final output) takes its value from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Binding {
    /// `input:<label>`: an input field of the original task.
    Input(String),
    /// `<subtask>.<field>`: an output field of an earlier subtask.
    Subtask { name: String, field: String },
}

impl TryFrom<String> for Binding {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if let Some(label) = s.strip_prefix("input:") {
            return if label.is_empty() { Err(format!("empty input label in `{s}`")) } else { Ok(Binding::Input(label.to_string())) };
        }
        match s.split_once('.') {
            Some((name, field)) if !name.is_empty() && !field.is_empty() => {
                Ok(Binding::Subtask { name: name.to_string(), field: field.to_string() })
            }
            _ => Err(format!("binding `{s}` is neither `input:<label>` nor `<subtask>.<field>`")),
        }
    }
}

impl From<Binding> for String {
    fn from(b: Binding) -> String {
        b.to_string()
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Input(l) => write!(f, "input:{l}"),
            Binding::Subtask { name, field } => write!(f, "{name}.{field}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBinding {
    pub field: String,
    pub from: Binding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalBinding {
    pub output_label: String,
    pub from: Binding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubTask {
    pub name: String,
    pub instruction: String,
    pub inputs: Vec<InputBinding>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub examples: Vec<Example>,
    /// Overrides the run's decoding parameters for this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoding: Option<DecodingParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSpec {
    pub task_id: String,
    pub subtasks: Vec<SubTask>,
    #[serde(rename = "final")]
    pub final_bindings: Vec<FinalBinding>,
}

impl DecompositionSpec {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Malformed(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("spec is for task `{spec}` but was checked against `{task}`")]
    TaskMismatch { spec: String, task: String },
    #[error("subtask `{subtask}`: binding `{binding}` does not resolve")]
    UnresolvedBinding { subtask: String, binding: String },
    #[error("subtask name `{0}` is used more than once")]
    DuplicateSubtask(String),
    #[error("subtask name `{0}` must be non-empty and contain no `.`")]
    InvalidSubtaskName(String),
    #[error("output label `{0}` has no final binding")]
    UncoveredOutputLabel(String),
    #[error("output label `{0}` is bound more than once")]
    DuplicateFinalBinding(String),
    #[error("final binding for `{0}`, which is not an output label of the task")]
    UnknownOutputLabel(String),
    #[error("subtask `{subtask}` reads `{binding}`, which is not produced before it")]
    ForwardReference { subtask: String, binding: String },
    #[error("subtask `{subtask}`: field `{field}` is declared more than once")]
    DuplicateField { subtask: String, field: String },
    #[error("subtask `{0}` declares no outputs")]
    NoOutputs(String),
    #[error("subtask `{0}`: example labels differ from the subtask fields")]
    ExampleLabels(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("malformed decomposition spec: {0}")]
    Malformed(String),
    #[error("invalid decomposition spec: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("missing field `{0}` in completion")]
    MissingField(String),
}

/// A spec that passed [`validate`] against a particular task.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec {
    spec: DecompositionSpec,
    category: TaskCategory,
    output_labels: Vec<String>,
}

impl ValidatedSpec {
    pub fn spec(&self) -> &DecompositionSpec {
        &self.spec
    }
}

fn check_unique<'a>(fields: impl IntoIterator<Item = &'a String>, subtask: &str, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for f in fields {
        if !seen.insert(f) {
            out.push(Violation::DuplicateField { subtask: subtask.to_string(), field: f.clone() });
        }
    }
}

/// Checks every structural invariant and reports all violations at once.
pub fn validate(spec: &DecompositionSpec, task: &TaskInstruction) -> Result<ValidatedSpec, PipelineError> {
    let mut v = Vec::new();
    if spec.task_id != task.id {
        v.push(Violation::TaskMismatch { spec: spec.task_id.clone(), task: task.id.clone() });
    }
    let mut names = HashSet::new();
    for st in &spec.subtasks {
        if st.name.is_empty() || st.name.contains('.') {
            v.push(Violation::InvalidSubtaskName(st.name.clone()));
        }
        if !names.insert(st.name.as_str()) {
            v.push(Violation::DuplicateSubtask(st.name.clone()));
        }
    }

    let position = |name: &str| spec.subtasks.iter().position(|s| s.name == name);
    for (i, st) in spec.subtasks.iter().enumerate() {
        if st.outputs.is_empty() {
            v.push(Violation::NoOutputs(st.name.clone()));
        }
        check_unique(st.inputs.iter().map(|b| &b.field), &st.name, &mut v);
        check_unique(&st.outputs, &st.name, &mut v);
        for b in &st.inputs {
            let unresolved = || Violation::UnresolvedBinding { subtask: st.name.clone(), binding: b.from.to_string() };
            match &b.from {
                Binding::Input(label) if !task.input_labels.contains(label) => v.push(unresolved()),
                Binding::Input(_) => {}
                Binding::Subtask { name, field } => match position(name) {
                    Some(j) if j >= i => {
                        v.push(Violation::ForwardReference { subtask: st.name.clone(), binding: b.from.to_string() })
                    }
                    Some(j) if !spec.subtasks[j].outputs.contains(field) => v.push(unresolved()),
                    Some(_) => {}
                    None => v.push(unresolved()),
                },
            }
        }
        let fields_in: HashSet<&String> = st.inputs.iter().map(|b| &b.field).collect();
        let fields_out: HashSet<&String> = st.outputs.iter().collect();
        if st.examples.iter().any(|ex| {
            ex.inputs.keys().collect::<HashSet<_>>() != fields_in || ex.outputs.keys().collect::<HashSet<_>>() != fields_out
        }) {
            v.push(Violation::ExampleLabels(st.name.clone()));
        }
    }

    let mut bound = HashSet::new();
    for fb in &spec.final_bindings {
        if !task.output_labels.contains(&fb.output_label) {
            v.push(Violation::UnknownOutputLabel(fb.output_label.clone()));
        }
        if !bound.insert(&fb.output_label) {
            v.push(Violation::DuplicateFinalBinding(fb.output_label.clone()));
        }
        let resolves = match &fb.from {
            Binding::Subtask { name, field } => position(name).is_some_and(|j| spec.subtasks[j].outputs.contains(field)),
            Binding::Input(_) => false,
        };
        if !resolves {
            v.push(Violation::UnresolvedBinding { subtask: "final".into(), binding: fb.from.to_string() });
        }
    }
    for label in &task.output_labels {
        if !bound.contains(label) {
            v.push(Violation::UncoveredOutputLabel(label.clone()));
        }
    }

    if v.is_empty() {
        Ok(ValidatedSpec { spec: spec.clone(), category: task.category, output_labels: task.output_labels.clone() })
    } else {
        Err(PipelineError::Invalid(v))
    }
}

/// Byte offsets of `label:` markers that start a line or follow whitespace.
fn marker_positions(text: &str, label: &str) -> Vec<usize> {
    let hay = text.to_ascii_lowercase();
    let needle = format!("{}:", label.to_ascii_lowercase());
    hay.match_indices(&needle)
        .map(|(i, _)| i)
        .filter(|&i| i == 0 || text[..i].chars().next_back().is_some_and(char::is_whitespace))
        .collect()
}

/// Extracts `expected` fields from a completion of `label: value` lines.
pub fn parse_labeled_output(text: &str, expected: &[String]) -> Result<FieldMap, PipelineError> {
    let mut found: Vec<(usize, usize, &String)> = Vec::new();
    for label in expected {
        match marker_positions(text, label).first() {
            Some(&at) => found.push((at, at + label.len() + 1, label)),
            None if expected.len() == 1 => {
                return Ok(FieldMap::from([(label.clone(), text.trim().to_string())]));
            }
            None => return Err(PipelineError::MissingField(label.clone())),
        }
    }
    found.sort();
    let mut values: FieldMap = FieldMap::new();
    for (k, (_, start, label)) in found.iter().enumerate() {
        let end = found.get(k + 1).map_or(text.len(), |next| next.0.max(*start));
        values.insert((*label).clone(), text[*start..end].trim().to_string());
    }
    Ok(expected.iter().map(|l| (l.clone(), values[l].clone())).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Completed,
    FailedAtStep(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub subtask: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<FieldMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Kept out of serialized traces so replayed runs stay byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub task_id: String,
    pub steps: Vec<StepRecord>,
    pub final_output: FieldMap,
    pub status: PipelineStatus,
}

impl PipelineTrace {
    /// One JSON object per step record.
    pub fn to_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("step serializes") + "\n")
            .collect()
    }
}

fn subtask_instruction(st: &SubTask, category: TaskCategory, task_id: &str) -> TaskInstruction {
    TaskInstruction {
        id: format!("{task_id}/{}", st.name),
        title: st.name.clone(),
        definition: st.instruction.clone(),
        emphasis_caution: None,
        things_to_avoid: None,
        prompt_line: None,
        category,
        input_labels: st.inputs.iter().map(|b| b.field.clone()).collect(),
        output_labels: st.outputs.clone(),
        positive_examples: st.examples.clone(),
        instances: Vec::new(),
    }
}

/// Runs the subtasks in order, one completion each. A failing step ends the
/// run with [`PipelineStatus::FailedAtStep`]; nothing is retried here.
pub fn execute(
    spec: &ValidatedSpec,
    task_input: &FieldMap,
    lm: &dyn Backend,
    params: &DecodingParams,
    few_shot: bool,
) -> PipelineTrace {
    let s = &spec.spec;
    let mut produced: Vec<FieldMap> = Vec::with_capacity(s.subtasks.len());
    let mut steps = Vec::with_capacity(s.subtasks.len());
    let fail = |steps: Vec<StepRecord>, n| PipelineTrace {
        task_id: s.task_id.clone(),
        steps,
        final_output: FieldMap::new(),
        status: PipelineStatus::FailedAtStep(n),
    };
    let lookup = |produced: &[FieldMap], b: &Binding| -> Option<String> {
        match b {
            Binding::Input(l) => task_input.get(l).cloned(),
            Binding::Subtask { name, field } => {
                let j = s.subtasks.iter().position(|st| &st.name == name)?;
                produced.get(j)?.get(field).cloned()
            }
        }
    };

    for (i, st) in s.subtasks.iter().enumerate() {
        let started = Instant::now();
        let n = i + 1;
        let mut record = StepRecord {
            step: n,
            subtask: st.name.clone(),
            prompt: String::new(),
            completion: None,
            parsed: None,
            error: None,
            wall_time: Duration::ZERO,
        };
        let mut inputs = FieldMap::new();
        for b in &st.inputs {
            match lookup(&produced, &b.from) {
                Some(value) => {
                    inputs.insert(b.field.clone(), value);
                }
                None => {
                    record.error = Some(format!("no value for `{}`", b.from));
                    steps.push(record);
                    return fail(steps, n);
                }
            }
        }
        let sub = subtask_instruction(st, spec.category, &s.task_id);
        let examples: &[Example] = if few_shot { &st.examples } else { &[] };
        let encoding = PromptEncoding::table(1, examples.len()).expect("encoding 1 exists");
        record.prompt = match encode_prompt(&sub, &encoding, examples, &inputs, None) {
            Ok(p) => p,
            Err(e) => {
                record.error = Some(e.to_string());
                steps.push(record);
                return fail(steps, n);
            }
        };
        let request = LmRequest::new(record.prompt.clone(), st.decoding.as_ref().unwrap_or(params));
        let outcome = lm.complete(&request);
        record.wall_time = started.elapsed();
        let completion = match outcome {
            Ok(r) => r.text,
            Err(e) => {
                record.error = Some(e.to_string());
                steps.push(record);
                return fail(steps, n);
            }
        };
        record.completion = Some(completion.clone());
        // The prompt already ends with the first output label as a cue.
        let cued = if marker_positions(&completion, &st.outputs[0]).is_empty() && st.outputs.len() > 1 {
            format!("{}: {completion}", st.outputs[0])
        } else {
            completion
        };
        match parse_labeled_output(&cued, &st.outputs) {
            Ok(fields) if fields.values().all(|v| !v.is_empty()) => {
                record.parsed = Some(fields.clone());
                produced.push(fields);
                steps.push(record);
            }
            Ok(fields) => {
                let empty: Vec<&String> = fields.iter().filter(|(_, v)| v.is_empty()).map(|(k, _)| k).collect();
                record.error = Some(format!("empty value for {empty:?}"));
                steps.push(record);
                return fail(steps, n);
            }
            Err(e) => {
                record.error = Some(e.to_string());
                steps.push(record);
                return fail(steps, n);
            }
        }
    }

    let mut final_output = FieldMap::new();
    for label in &spec.output_labels {
        let fb = s.final_bindings.iter().find(|f| &f.output_label == label).expect("validated coverage");
        let value = lookup(&produced, &fb.from).expect("validated binding");
        final_output.insert(label.clone(), value);
    }
    PipelineTrace { task_id: s.task_id.clone(), steps, final_output, status: PipelineStatus::Completed }
}
