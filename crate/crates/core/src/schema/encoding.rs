use serde::{Deserialize, Serialize};

use super::{Example, FieldMap, SchemaError, Section, TaskInstruction};

/// Number of shipped encodings.
pub const ENCODING_COUNT: u8 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExampleStyle {
    /// Render examples with `Input:`/`Output:` instead of the task's own labels.
    pub generic_headers: bool,
    pub explanations: bool,
}

/// One prompt rendering: which sections appear and how examples are laid out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEncoding {
    pub encoding_id: u8,
    pub included_sections: Vec<Section>,
    pub example_count: usize,
    pub section_separator: String,
    /// Per-example header line; `{n}` is replaced by the 1-based example index.
    /// Empty means no header line.
    pub example_header_format: String,
    pub example_style: ExampleStyle,
}

impl PromptEncoding {
    /// Looks up an encoding in the shipped table.
    ///
    /// Ids 1..=8 are the canonical-order subsets of the optional sections, always
    /// led by the definition, with examples in task labels. Ids 9..=12 vary the
    /// example rendering.
    pub fn table(encoding_id: u8, example_count: usize) -> Result<Self, SchemaError> {
        use Section::*;
        let (sections, generic_headers, explanations) = match encoding_id {
            1..=8 => {
                let mask = encoding_id - 1;
                let mut sections = vec![Definition];
                for (bit, section) in [EmphasisCaution, ThingsToAvoid, PromptLine].into_iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        sections.push(section);
                    }
                }
                (sections, false, false)
            }
            9 => (Section::CANONICAL.to_vec(), false, true),
            10 => (Section::CANONICAL.to_vec(), true, false),
            11 => (Section::CANONICAL.to_vec(), true, true),
            12 => (vec![Definition], true, false),
            other => return Err(SchemaError::UnknownEncoding(other)),
        };
        Ok(PromptEncoding {
            encoding_id,
            included_sections: sections,
            example_count,
            section_separator: "\n\n".to_string(),
            example_header_format: if generic_headers { "Example {n}".to_string() } else { String::new() },
            example_style: ExampleStyle { generic_headers, explanations },
        })
    }

    /// All twelve encodings with the same example count.
    pub fn all(example_count: usize) -> Vec<Self> {
        (1..=ENCODING_COUNT)
            .map(|id| Self::table(id, example_count).expect("id in table"))
            .collect()
    }

    pub fn with_example_count(mut self, example_count: usize) -> Self {
        self.example_count = example_count;
        self
    }
}

fn render_example(
    task: &TaskInstruction,
    encoding: &PromptEncoding,
    index: usize,
    example: &Example,
) -> String {
    let mut lines = Vec::new();
    if !encoding.example_header_format.is_empty() {
        lines.push(encoding.example_header_format.replace("{n}", &index.to_string()));
    }
    if encoding.example_style.generic_headers {
        let join = |labels: &[String], fields: &FieldMap| {
            labels
                .iter()
                .filter_map(|l| fields.get(l).map(String::as_str))
                .collect::<Vec<_>>()
                .join(" ")
        };
        lines.push(format!("Input: {}", join(&task.input_labels, &example.inputs)));
        lines.push(format!("Output: {}", join(&task.output_labels, &example.outputs)));
    } else {
        for label in &task.input_labels {
            if let Some(v) = example.inputs.get(label) {
                lines.push(format!("{label}: {v}"));
            }
        }
        for label in &task.output_labels {
            if let Some(v) = example.outputs.get(label) {
                lines.push(format!("{label}: {v}"));
            }
        }
    }
    if encoding.example_style.explanations {
        if let Some(e) = &example.explanation {
            lines.push(format!("Explanation: {e}"));
        }
    }
    lines.join("\n")
}

/// Renders the full prompt: instruction sections, examples, the new input, an
/// optional constraint sentence, and the `<first output label>:` generation cue.
pub fn encode_prompt(
    task: &TaskInstruction,
    encoding: &PromptEncoding,
    examples: &[Example],
    new_input: &FieldMap,
    constraint: Option<&str>,
) -> Result<String, SchemaError> {
    if let Some(label) = new_input.keys().find(|k| !task.input_labels.contains(k)) {
        return Err(SchemaError::UnknownLabel(label.clone()));
    }
    let mut blocks = Vec::new();
    for section in &encoding.included_sections {
        if let Some(text) = task.section(*section) {
            blocks.push(match section.heading() {
                Some(h) => format!("{h}: {text}"),
                None => text.to_string(),
            });
        }
    }
    for (i, example) in examples.iter().enumerate() {
        blocks.push(render_example(task, encoding, i + 1, example));
    }

    let mut tail: Vec<String> = task
        .input_labels
        .iter()
        .filter_map(|l| new_input.get(l).map(|v| format!("{l}: {v}")))
        .collect();
    if let Some(c) = constraint {
        tail.push(c.to_string());
    }
    tail.push(format!("{}:", task.output_labels[0]));
    blocks.push(tail.join("\n"));
    Ok(blocks.join(&encoding.section_separator))
}
