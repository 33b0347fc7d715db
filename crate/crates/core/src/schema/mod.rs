//! Task files, prompt encodings and example packing.

mod encoding;
mod tokens;

pub use encoding::{encode_prompt, ExampleStyle, PromptEncoding, ENCODING_COUNT};
pub use tokens::{count_tokens_default, pack_examples, HeuristicCounter, TokenCounter};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ordered `label -> text` map used for example and instance fields.
pub type FieldMap = IndexMap<String, String>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed task document: {0}")]
    MalformedDocument(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown encoding id {0} (expected 1..=12)")]
    UnknownEncoding(u8),
    #[error("token budget {budget} is smaller than the zero-example prompt ({needed} tokens)")]
    BudgetTooSmall { needed: usize, budget: usize },
}

/// Task category taxonomy of the evaluation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskCategory {
    QG,
    AG,
    CF,
    IAG,
    MM,
    VF,
}

impl TaskCategory {
    /// Column order used by report tables.
    pub const ALL: [TaskCategory; 6] = [
        TaskCategory::QG,
        TaskCategory::AG,
        TaskCategory::CF,
        TaskCategory::IAG,
        TaskCategory::MM,
        TaskCategory::VF,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::QG => "QG",
            TaskCategory::AG => "AG",
            TaskCategory::CF => "CF",
            TaskCategory::IAG => "IAG",
            TaskCategory::MM => "MM",
            TaskCategory::VF => "VF",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskCategory {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SchemaError::MalformedDocument(format!("unknown category `{s}`")))
    }
}

/// Instruction sections in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Section {
    Definition,
    EmphasisCaution,
    ThingsToAvoid,
    PromptLine,
}

impl Section {
    pub const CANONICAL: [Section; 4] = [
        Section::Definition,
        Section::EmphasisCaution,
        Section::ThingsToAvoid,
        Section::PromptLine,
    ];

    /// Heading used when the section is rendered into a prompt.
    pub fn heading(self) -> Option<&'static str> {
        match self {
            Section::Definition => None,
            Section::EmphasisCaution => Some("Emphasis & Caution"),
            Section::ThingsToAvoid => Some("Things to avoid"),
            Section::PromptLine => Some("Prompt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub inputs: FieldMap,
    pub outputs: FieldMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub inputs: FieldMap,
    pub references: Vec<FieldMap>,
}

/// A parsed task: sectioned instruction text, labeled examples and evaluation instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstruction {
    pub id: String,
    pub title: String,
    pub definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emphasis_caution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub things_to_avoid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_line: Option<String>,
    pub category: TaskCategory,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    #[serde(rename = "examples")]
    pub positive_examples: Vec<Example>,
    pub instances: Vec<Instance>,
}

/// Result of [`parse_task_file`]: the task plus non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTask {
    pub task: TaskInstruction,
    pub warnings: Vec<String>,
}

const KNOWN_FIELDS: [&str; 11] = [
    "id",
    "title",
    "definition",
    "emphasis_caution",
    "things_to_avoid",
    "prompt_line",
    "category",
    "input_labels",
    "output_labels",
    "examples",
    "instances",
];

#[derive(Deserialize)]
struct RawTask {
    id: Option<String>,
    title: Option<String>,
    definition: Option<String>,
    emphasis_caution: Option<String>,
    things_to_avoid: Option<String>,
    prompt_line: Option<String>,
    category: Option<String>,
    input_labels: Option<Vec<String>>,
    output_labels: Option<Vec<String>>,
    #[serde(default)]
    examples: Vec<Example>,
    #[serde(default)]
    instances: Vec<Instance>,
}

/// Parses one JSON task document.
pub fn parse_task_file(content: &str) -> Result<ParsedTask, SchemaError> {
    let value: serde_json::Value =
        serde_json::from_str(content).map_err(|e| SchemaError::MalformedDocument(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| SchemaError::MalformedDocument("top level is not an object".into()))?;
    let warnings = object
        .keys()
        .filter(|k| !KNOWN_FIELDS.contains(&k.as_str()))
        .map(|k| format!("ignored unknown field `{k}`"))
        .collect();

    let raw: RawTask = serde_json::from_value(value.clone())
        .map_err(|e| SchemaError::MalformedDocument(e.to_string()))?;

    let id = raw.id.ok_or_else(|| SchemaError::MissingField("id".into()))?;
    let definition = raw
        .definition
        .filter(|d| !d.trim().is_empty())
        .ok_or_else(|| SchemaError::MissingField("definition".into()))?;
    let category = raw
        .category
        .ok_or_else(|| SchemaError::MissingField("category".into()))?
        .parse()?;
    let input_labels = raw
        .input_labels
        .filter(|l| !l.is_empty())
        .ok_or_else(|| SchemaError::MissingField("input_labels".into()))?;
    let output_labels = raw
        .output_labels
        .filter(|l| !l.is_empty())
        .ok_or_else(|| SchemaError::MissingField("output_labels".into()))?;

    let task = TaskInstruction {
        title: raw.title.unwrap_or_else(|| id.clone()),
        id,
        definition,
        emphasis_caution: raw.emphasis_caution.filter(|s| !s.trim().is_empty()),
        things_to_avoid: raw.things_to_avoid.filter(|s| !s.trim().is_empty()),
        prompt_line: raw.prompt_line.filter(|s| !s.trim().is_empty()),
        category,
        input_labels,
        output_labels,
        positive_examples: raw.examples,
        instances: raw.instances,
    };
    task.validate()?;
    Ok(ParsedTask { task, warnings })
}

fn check_unique(labels: &[String], what: &str) -> Result<(), SchemaError> {
    let mut seen = HashSet::new();
    for label in labels {
        if label.trim().is_empty() {
            return Err(SchemaError::LabelMismatch(format!("empty {what} label")));
        }
        if !seen.insert(label.as_str()) {
            return Err(SchemaError::LabelMismatch(format!("duplicate {what} label `{label}`")));
        }
    }
    Ok(())
}

fn check_fields(fields: &FieldMap, declared: &[String], ctx: &str) -> Result<(), SchemaError> {
    let same = fields.len() == declared.len() && declared.iter().all(|l| fields.contains_key(l));
    if same {
        Ok(())
    } else {
        let got: Vec<&str> = fields.keys().map(String::as_str).collect();
        Err(SchemaError::LabelMismatch(format!("{ctx}: expected {declared:?}, found {got:?}")))
    }
}

impl TaskInstruction {
    /// Checks every structural invariant of the task.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.definition.trim().is_empty() {
            return Err(SchemaError::MissingField("definition".into()));
        }
        if self.input_labels.is_empty() {
            return Err(SchemaError::MissingField("input_labels".into()));
        }
        if self.output_labels.is_empty() {
            return Err(SchemaError::MissingField("output_labels".into()));
        }
        check_unique(&self.input_labels, "input")?;
        check_unique(&self.output_labels, "output")?;
        for (i, ex) in self.positive_examples.iter().enumerate() {
            check_fields(&ex.inputs, &self.input_labels, &format!("example {} inputs", i + 1))?;
            check_fields(&ex.outputs, &self.output_labels, &format!("example {} outputs", i + 1))?;
            if let Some((label, _)) = ex.outputs.iter().find(|(_, v)| v.trim().is_empty()) {
                return Err(SchemaError::LabelMismatch(format!(
                    "example {} has empty output `{label}`",
                    i + 1
                )));
            }
        }
        for inst in &self.instances {
            check_fields(&inst.inputs, &self.input_labels, &format!("instance {} inputs", inst.id))?;
            if inst.references.is_empty() {
                return Err(SchemaError::MissingField(format!("instance {} references", inst.id)));
            }
            for r in &inst.references {
                check_fields(r, &self.output_labels, &format!("instance {} reference", inst.id))?;
            }
        }
        Ok(())
    }

    pub fn section(&self, section: Section) -> Option<&str> {
        match section {
            Section::Definition => Some(self.definition.as_str()),
            Section::EmphasisCaution => self.emphasis_caution.as_deref(),
            Section::ThingsToAvoid => self.things_to_avoid.as_deref(),
            Section::PromptLine => self.prompt_line.as_deref(),
        }
    }

    /// Serializes back into the task file format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task serializes")
    }

    /// The instruction text alone (all present sections), as seen by a reader.
    pub fn instruction_text(&self) -> String {
        Section::CANONICAL
            .iter()
            .filter_map(|s| {
                self.section(*s).map(|text| match s.heading() {
                    Some(h) => format!("{h}: {text}"),
                    None => text.to_string(),
                })
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Renders output fields as `Label: value` lines (single-label tasks render the bare value).
pub fn render_outputs(labels: &[String], fields: &FieldMap) -> String {
    if labels.len() == 1 {
        return fields.get(&labels[0]).cloned().unwrap_or_default();
    }
    labels
        .iter()
        .map(|l| format!("{l}: {}", fields.get(l).map(String::as_str).unwrap_or("")))
        .collect::<Vec<_>>()
        .join("\n")
}
