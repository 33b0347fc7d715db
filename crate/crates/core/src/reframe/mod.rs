//! The five reframing operators as deterministic, audited transformations.
//!
//! Every operator takes a [`TaskInstruction`] and returns a [`ReframedInstruction`]
//! that carries the edited instruction sections and an ordered audit trail. The
//! audit is replayable: [`reconstruct`] applies it to the base task and must
//! yield exactly the operator's output.

mod config;
mod negation;
mod ops;
pub mod segment;

pub use config::{apply_operators, MineSettings, OperatorSpec, ReframeConfig, ReframeEntry};
pub use negation::{
    rewrite_negation, EntryKind, LexiconEntry, NegationLexicon, NegationStatus, LEXICON_VERSION,
};
pub use ops::{
    apply_patterns, itemize, itemize_with, mine_patterns, restrain, restraint_sentence, specialize,
    PatternLibrary, PatternSource, SpecializationSpec,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Section, TaskInstruction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReframeError {
    #[error("output space is empty")]
    EmptyOutputSpace,
    #[error("output space entries must be distinct and non-empty: {0}")]
    InvalidOutputSpace(String),
    #[error("examples lack output label `{0}`")]
    LabelMissing(String),
    #[error("no pattern reaches the minimum count")]
    NoPatternsFound,
    #[error("invalid pattern library: {0}")]
    InvalidLibrary(String),
    #[error("invalid mining parameters: {0}")]
    InvalidParameters(String),
    #[error("specialization directive is empty")]
    EmptyDirective,
    #[error("reframing left an empty definition")]
    EverythingDropped,
    #[error("reframe config: {0}")]
    Config(String),
    #[error("audit replay failed: {0}")]
    Audit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TechniqueTag {
    Pattern,
    Itemizing,
    Decomposition,
    Restraining,
    Specialization,
}

impl TechniqueTag {
    pub const ALL: [TechniqueTag; 5] = [
        TechniqueTag::Pattern,
        TechniqueTag::Itemizing,
        TechniqueTag::Decomposition,
        TechniqueTag::Restraining,
        TechniqueTag::Specialization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TechniqueTag::Pattern => "Pattern",
            TechniqueTag::Itemizing => "Itemizing",
            TechniqueTag::Decomposition => "Decomposition",
            TechniqueTag::Restraining => "Restraining",
            TechniqueTag::Specialization => "Specialization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

/// Instruction sections an audit record can touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditSection {
    Definition,
    EmphasisCaution,
    ThingsToAvoid,
    PromptLine,
    Constraint,
}

impl From<Section> for AuditSection {
    fn from(s: Section) -> Self {
        match s {
            Section::Definition => AuditSection::Definition,
            Section::EmphasisCaution => AuditSection::EmphasisCaution,
            Section::ThingsToAvoid => AuditSection::ThingsToAvoid,
            Section::PromptLine => AuditSection::PromptLine,
        }
    }
}

/// One textual edit. Replay semantics: an empty `before` appends `after` to the
/// section; otherwise the last occurrence of `before` is replaced by `after`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub section: AuditSection,
    pub before: String,
    pub after: String,
    pub rule: String,
}

impl ChangeRecord {
    pub(crate) fn new(section: AuditSection, before: impl Into<String>, after: impl Into<String>, rule: impl Into<String>) -> Self {
        ChangeRecord { section, before: before.into(), after: after.into(), rule: rule.into() }
    }
}

/// Replaces the last occurrence of `before` (replay semantics of [`ChangeRecord`]).
pub(crate) fn replace_last(text: &str, before: &str, after: &str) -> Option<String> {
    let at = text.rfind(before)?;
    Some(format!("{}{}{}", &text[..at], after, &text[at + before.len()..]))
}

/// Instruction text sections, the unit audit replay operates on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSections {
    pub definition: String,
    pub emphasis_caution: Option<String>,
    pub things_to_avoid: Option<String>,
    pub prompt_line: Option<String>,
    pub constraint: Option<String>,
}

impl InstructionSections {
    pub fn of_task(task: &TaskInstruction) -> Self {
        InstructionSections {
            definition: task.definition.clone(),
            emphasis_caution: task.emphasis_caution.clone(),
            things_to_avoid: task.things_to_avoid.clone(),
            prompt_line: task.prompt_line.clone(),
            constraint: None,
        }
    }

    fn slot(&mut self, section: AuditSection) -> Option<&mut Option<String>> {
        match section {
            AuditSection::Definition => None,
            AuditSection::EmphasisCaution => Some(&mut self.emphasis_caution),
            AuditSection::ThingsToAvoid => Some(&mut self.things_to_avoid),
            AuditSection::PromptLine => Some(&mut self.prompt_line),
            AuditSection::Constraint => Some(&mut self.constraint),
        }
    }

    pub(crate) fn apply(&mut self, record: &ChangeRecord) -> Result<(), ReframeError> {
        let edit = |text: &str| -> Result<String, ReframeError> {
            if record.before.is_empty() {
                return Ok(format!("{text}{}", record.after));
            }
            replace_last(text, &record.before, &record.after).ok_or_else(|| {
                ReframeError::Audit(format!("`{}` not found for rule {}", record.before, record.rule))
            })
        };
        match self.slot(record.section) {
            None => self.definition = edit(&self.definition)?,
            Some(slot) => {
                let updated = edit(slot.as_deref().unwrap_or(""))?;
                *slot = Some(updated).filter(|s| !s.is_empty());
            }
        }
        Ok(())
    }
}

/// Replays an audit trail on the base task's sections.
pub fn reconstruct(base: &TaskInstruction, audit: &[ChangeRecord]) -> Result<InstructionSections, ReframeError> {
    let mut sections = InstructionSections::of_task(base);
    for record in audit {
        sections.apply(record)?;
    }
    Ok(sections)
}

/// A transformed instruction plus its audit trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReframedInstruction {
    /// Id of the base task.
    pub base: String,
    pub techniques: Vec<TechniqueTag>,
    /// Main definition text; for itemized instructions, the lead-in sentence.
    pub definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bullets: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emphasis_caution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub things_to_avoid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_line: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patterns_used: Option<Vec<String>>,
    pub audit: Vec<ChangeRecord>,
    pub warnings: Vec<String>,
}

impl ReframedInstruction {
    pub(crate) fn unchanged(task: &TaskInstruction, technique: TechniqueTag) -> Self {
        ReframedInstruction {
            base: task.id.clone(),
            techniques: vec![technique],
            definition: task.definition.clone(),
            bullets: None,
            emphasis_caution: task.emphasis_caution.clone(),
            things_to_avoid: task.things_to_avoid.clone(),
            prompt_line: task.prompt_line.clone(),
            constraint: None,
            patterns_used: None,
            audit: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Definition with bullets rendered as `- ` lines.
    pub fn rendered_definition(&self) -> String {
        let mut text = self.definition.clone();
        for b in self.bullets.iter().flatten() {
            text.push_str("\n- ");
            text.push_str(b);
        }
        text
    }

    pub fn sections(&self) -> InstructionSections {
        InstructionSections {
            definition: self.rendered_definition(),
            emphasis_caution: self.emphasis_caution.clone(),
            things_to_avoid: self.things_to_avoid.clone(),
            prompt_line: self.prompt_line.clone(),
            constraint: self.constraint.clone(),
        }
    }

    /// The base task with its instruction replaced by this reframing.
    /// Examples and instances are carried over untouched.
    pub fn apply_to(&self, task: &TaskInstruction) -> TaskInstruction {
        TaskInstruction {
            definition: self.rendered_definition(),
            emphasis_caution: self.emphasis_caution.clone(),
            things_to_avoid: self.things_to_avoid.clone(),
            prompt_line: self.prompt_line.clone(),
            ..task.clone()
        }
    }

    /// Chains `next`, which was produced from `self.apply_to(base)`.
    pub fn then(self, next: ReframedInstruction) -> ReframedInstruction {
        let keeps_bullets = next.bullets.is_none() && next.definition == self.rendered_definition();
        let (definition, bullets) = if keeps_bullets {
            (self.definition, self.bullets)
        } else {
            (next.definition, next.bullets)
        };
        let mut techniques = self.techniques;
        for t in next.techniques {
            if !techniques.contains(&t) {
                techniques.push(t);
            }
        }
        let patterns_used = match (self.patterns_used, next.patterns_used) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            (a, b) => b.or(a),
        };
        ReframedInstruction {
            base: self.base,
            techniques,
            definition,
            bullets,
            emphasis_caution: next.emphasis_caution,
            things_to_avoid: next.things_to_avoid,
            prompt_line: next.prompt_line,
            constraint: next.constraint.or(self.constraint),
            patterns_used,
            audit: self.audit.into_iter().chain(next.audit).collect(),
            warnings: self.warnings.into_iter().chain(next.warnings).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_semantics() {
        let mut s = InstructionSections { definition: "a b a".into(), ..Default::default() };
        s.apply(&ChangeRecord::new(AuditSection::Definition, "a", "c", "t")).unwrap();
        assert_eq!(s.definition, "a b c");
        s.apply(&ChangeRecord::new(AuditSection::Definition, "", "\n- x", "t")).unwrap();
        assert_eq!(s.definition, "a b c\n- x");
        s.apply(&ChangeRecord::new(AuditSection::Constraint, "", "Answer X?", "t")).unwrap();
        assert_eq!(s.constraint.as_deref(), Some("Answer X?"));
        s.apply(&ChangeRecord::new(AuditSection::Constraint, "Answer X?", "", "t")).unwrap();
        assert_eq!(s.constraint, None);
        assert!(s.apply(&ChangeRecord::new(AuditSection::Definition, "zzz", "", "t")).is_err());
    }
}
