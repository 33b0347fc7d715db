use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::negation::NegationLexicon;
use super::ops::{apply_patterns, itemize_with, mine_patterns, restrain, specialize, PatternLibrary, SpecializationSpec};
use super::{ReframeError, ReframedInstruction, TechniqueTag};
use crate::schema::TaskInstruction;

/// Per-task operator chains, loaded from JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReframeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negation_lexicon: Option<PathBuf>,
    /// Glob patterns for the raw task files the entries refer to.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub task_files: Vec<String>,
    pub tasks: IndexMap<String, ReframeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReframeEntry {
    pub operators: Vec<OperatorSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineSettings {
    #[serde(default = "default_max_ngram")]
    pub max_ngram: usize,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_max_ngram() -> usize {
    3
}

fn default_min_count() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OperatorSpec {
    Pattern {
        #[serde(default)]
        patterns: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mine: Option<MineSettings>,
    },
    Itemize,
    Restrain {
        output_space: Vec<String>,
    },
    Specialize(SpecializationSpec),
    /// Marks the task for pipeline execution; the instruction text is untouched.
    Decompose {
        decomposition: PathBuf,
    },
}

impl ReframeConfig {
    pub fn from_json(text: &str) -> Result<Self, ReframeError> {
        serde_json::from_str(text).map_err(|e| ReframeError::Config(e.to_string()))
    }

    /// Loads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ReframeError> {
        let text = fs::read_to_string(path).map_err(|e| ReframeError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(lex) = &mut config.negation_lexicon {
            *lex = dir.join(&*lex);
        }
        for pattern in &mut config.task_files {
            *pattern = dir.join(&*pattern).to_string_lossy().into_owned();
        }
        for entry in config.tasks.values_mut() {
            for op in &mut entry.operators {
                if let OperatorSpec::Decompose { decomposition } = op {
                    *decomposition = dir.join(&*decomposition);
                }
            }
        }
        Ok(config)
    }

    /// The configured lexicon, or the built-in one.
    pub fn lexicon(&self) -> Result<NegationLexicon, ReframeError> {
        match &self.negation_lexicon {
            None => Ok(NegationLexicon::builtin().clone()),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ReframeError::Config(format!("{}: {e}", path.display())))?;
                NegationLexicon::from_json(&text)
            }
        }
    }

    pub fn entry(&self, task_id: &str) -> Option<&ReframeEntry> {
        self.tasks.get(task_id)
    }
}

impl ReframeEntry {
    pub fn decomposition(&self) -> Option<&Path> {
        self.operators.iter().find_map(|op| match op {
            OperatorSpec::Decompose { decomposition } => Some(decomposition.as_path()),
            _ => None,
        })
    }
}

fn apply_one(task: &TaskInstruction, op: &OperatorSpec, lexicon: &NegationLexicon) -> Result<ReframedInstruction, ReframeError> {
    match op {
        OperatorSpec::Pattern { patterns, mine } => {
            let supplied = if patterns.is_empty() { None } else { Some(PatternLibrary::supplied(patterns.iter().cloned())?) };
            let mined = match mine {
                Some(m) => Some(mine_patterns(&task.positive_examples, &task.output_labels[0], m.max_ngram, m.min_count)?),
                None => None,
            };
            let library = match (supplied, mined) {
                (Some(s), Some(m)) => s.merge(m),
                (Some(lib), None) | (None, Some(lib)) => lib,
                (None, None) => return Err(ReframeError::Config("pattern operator needs `patterns` or `mine`".into())),
            };
            Ok(apply_patterns(task, &library))
        }
        OperatorSpec::Itemize => Ok(itemize_with(task, lexicon)),
        OperatorSpec::Restrain { output_space } => restrain(task, output_space),
        OperatorSpec::Specialize(spec) => specialize(task, spec),
        OperatorSpec::Decompose { .. } => Ok(ReframedInstruction::unchanged(task, TechniqueTag::Decomposition)),
    }
}

/// Applies `operators` in order, each to the result of the previous one.
pub fn apply_operators(
    task: &TaskInstruction,
    operators: &[OperatorSpec],
    lexicon: &NegationLexicon,
) -> Result<ReframedInstruction, ReframeError> {
    let (first, rest) = operators
        .split_first()
        .ok_or_else(|| ReframeError::Config(format!("task `{}` has no operators", task.id)))?;
    let mut acc = apply_one(task, first, lexicon)?;
    for op in rest {
        let next = apply_one(&acc.apply_to(task), op, lexicon)?;
        acc = acc.then(next);
    }
    Ok(acc)
}
