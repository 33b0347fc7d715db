use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::negation::{NegationLexicon, NegationStatus};
use super::segment::{split_sentences, strip_enumerator};
use super::{AuditSection, ChangeRecord, InstructionSections, ReframeError, ReframedInstruction, TechniqueTag};
use crate::schema::{Example, Section, TaskInstruction};

// ---------------------------------------------------------------- itemizing

/// `Do <>.` loses its period: the slot stands for the whole clause.
fn tidy_bullet(sentence: &str) -> String {
    let s = strip_enumerator(sentence).trim();
    match s.strip_suffix('.') {
        Some(body) if body.ends_with('>') && body.contains('<') => body.to_string(),
        _ => s.to_string(),
    }
}

/// Splits a definition into prose and lines already formatted as bullets.
fn split_prose_and_bullets(definition: &str) -> (String, Vec<String>) {
    let mut prose = Vec::new();
    let mut bullets = Vec::new();
    for line in definition.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with('-') {
            bullets.push(strip_enumerator(line).to_string());
        } else {
            prose.push(line);
        }
    }
    (prose.join(" "), bullets)
}

pub fn itemize(task: &TaskInstruction) -> ReframedInstruction {
    itemize_with(task, NegationLexicon::builtin())
}

/// Turns the requirement prose into a lead-in sentence plus positive bullets.
pub fn itemize_with(task: &TaskInstruction, lexicon: &NegationLexicon) -> ReframedInstruction {
    let mut out = ReframedInstruction::unchanged(task, TechniqueTag::Itemizing);
    let mut replay = InstructionSections::of_task(task);
    let mut record = |out: &mut ReframedInstruction, r: ChangeRecord| {
        replay.apply(&r).expect("itemize emits replayable records");
        out.audit.push(r);
    };

    let (prose, existing) = split_prose_and_bullets(&task.definition);
    let mut sentences = split_sentences(&prose).into_iter();
    let raw_lead = sentences.next().unwrap_or_default();
    let mut raw_bullets: Vec<String> = sentences.map(|s| tidy_bullet(&s)).collect();
    raw_bullets.extend(existing);
    for text in [&task.emphasis_caution, &task.things_to_avoid].into_iter().flatten() {
        raw_bullets.extend(split_sentences(text).iter().map(|s| tidy_bullet(s)));
    }
    raw_bullets.retain(|b| !b.is_empty());

    if task.definition != raw_lead {
        record(&mut out, ChangeRecord::new(AuditSection::Definition, task.definition.clone(), raw_lead.clone(), "itemize:lead-in"));
    }
    let mut lead = raw_lead;
    if !raw_bullets.is_empty() {
        for (before, after) in lexicon.lead_in_edits(&lead) {
            lead = super::replace_last(&lead, &before, &after).expect("edit applies");
            record(&mut out, ChangeRecord::new(AuditSection::Definition, before, after, "itemize:lead-in-rewrite"));
        }
    }
    for (section, text) in [
        (AuditSection::EmphasisCaution, &task.emphasis_caution),
        (AuditSection::ThingsToAvoid, &task.things_to_avoid),
    ] {
        if let Some(text) = text {
            record(&mut out, ChangeRecord::new(section, text.clone(), "", "itemize:merge-into-bullets"));
        }
    }

    let mut bullets = Vec::with_capacity(raw_bullets.len());
    for raw in raw_bullets {
        record(&mut out, ChangeRecord::new(AuditSection::Definition, "", format!("\n- {raw}"), "itemize:bullet"));
        let (rewritten, status) = lexicon.rewrite(&raw);
        match status {
            NegationStatus::Unchanged => {
                if lexicon.has_negation_cue(&raw) {
                    out.warnings.push(format!("negation kept verbatim: {raw}"));
                }
            }
            NegationStatus::Rewritten | NegationStatus::DoubleNegationEliminated => {
                let rule = if status == NegationStatus::Rewritten {
                    "negation:rewritten"
                } else {
                    "negation:double-negation"
                };
                record(&mut out, ChangeRecord::new(AuditSection::Definition, format!("- {raw}"), format!("- {rewritten}"), rule));
            }
        }
        bullets.push(if status == NegationStatus::Unchanged { raw } else { rewritten });
    }
    if bullets.is_empty() {
        out.warnings.push("single-sentence instruction: nothing to itemize".to_string());
    }

    out.definition = lead;
    out.bullets = Some(bullets);
    out.emphasis_caution = None;
    out.things_to_avoid = None;
    debug_assert_eq!(replay, out.sections());
    out
}

// --------------------------------------------------------------- restraining

/// `Answer either A, B or C?`; a single label gives `Answer A?`.
pub fn restraint_sentence(output_space: &[String]) -> Result<String, ReframeError> {
    let Some((last, rest)) = output_space.split_last() else {
        return Err(ReframeError::EmptyOutputSpace);
    };
    let mut seen = HashSet::new();
    for entry in output_space {
        if entry.trim().is_empty() || !seen.insert(entry.as_str()) {
            return Err(ReframeError::InvalidOutputSpace(format!("{output_space:?}")));
        }
    }
    if rest.is_empty() {
        Ok(format!("Answer {last}?"))
    } else {
        Ok(format!("Answer either {} or {last}?", rest.join(", ")))
    }
}

/// Adds an output-constraint sentence; the instruction text is left as is.
pub fn restrain(task: &TaskInstruction, output_space: &[String]) -> Result<ReframedInstruction, ReframeError> {
    let sentence = restraint_sentence(output_space)?;
    let mut out = ReframedInstruction::unchanged(task, TechniqueTag::Restraining);
    out.audit.push(ChangeRecord::new(AuditSection::Constraint, "", sentence.clone(), "restrain:constraint"));
    out.constraint = Some(sentence);
    Ok(out)
}

// ------------------------------------------------------------------ patterns

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternSource {
    Mined,
    Supplied,
    Mixed,
}

/// Non-empty, case-insensitively deduplicated list of output phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternLibrary {
    patterns: Vec<String>,
    source: PatternSource,
}

impl PatternLibrary {
    pub fn new<I, S>(patterns: I, source: PatternSource) -> Result<Self, ReframeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for p in patterns {
            let p: String = p.into();
            let trimmed = p.trim();
            if trimmed.is_empty() {
                return Err(ReframeError::InvalidLibrary("empty pattern".into()));
            }
            if seen.insert(trimmed.to_lowercase()) {
                kept.push(trimmed.to_string());
            }
        }
        if kept.is_empty() {
            return Err(ReframeError::InvalidLibrary("no patterns".into()));
        }
        Ok(PatternLibrary { patterns: kept, source })
    }

    pub fn supplied<I, S>(patterns: I) -> Result<Self, ReframeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(patterns, PatternSource::Supplied)
    }

    /// Supplied phrases first, then mined ones not already present.
    pub fn merge(self, other: PatternLibrary) -> PatternLibrary {
        let source = if self.source == other.source { self.source } else { PatternSource::Mixed };
        Self::new(self.patterns.into_iter().chain(other.patterns), source).expect("both sides non-empty")
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn source(&self) -> PatternSource {
        self.source
    }
}

fn pattern_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Frequent leading n-grams of the example outputs under `output_label`.
pub fn mine_patterns(
    examples: &[Example],
    output_label: &str,
    max_ngram: usize,
    min_count: usize,
) -> Result<PatternLibrary, ReframeError> {
    if examples.is_empty() {
        return Err(ReframeError::InvalidParameters("no examples".into()));
    }
    if !(1..=6).contains(&max_ngram) || min_count == 0 {
        return Err(ReframeError::InvalidParameters(format!("max_ngram={max_ngram}, min_count={min_count}")));
    }
    let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
    for ex in examples {
        let output = ex
            .outputs
            .get(output_label)
            .ok_or_else(|| ReframeError::LabelMissing(output_label.to_string()))?;
        let tokens = pattern_tokens(output);
        for n in 1..=max_ngram.min(tokens.len()) {
            *counts.entry(tokens[..n].to_vec()).or_default() += 1;
        }
    }
    let frequent: Vec<(&Vec<String>, usize)> =
        counts.iter().filter(|(_, c)| **c >= min_count).map(|(g, c)| (g, *c)).collect();
    let mut kept: Vec<(&Vec<String>, usize)> = frequent
        .iter()
        .filter(|(gram, count)| {
            !frequent
                .iter()
                .any(|(other, oc)| other.len() > gram.len() && other.starts_with(gram) && oc == count)
        })
        .copied()
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.len().cmp(&a.0.len())).then(a.0.cmp(b.0)));
    if kept.is_empty() {
        return Err(ReframeError::NoPatternsFound);
    }
    PatternLibrary::new(kept.into_iter().map(|(g, _)| g.join(" ")), PatternSource::Mined)
}

/// Replaces the definition with a pattern-listing instruction.
pub fn apply_patterns(task: &TaskInstruction, library: &PatternLibrary) -> ReframedInstruction {
    let quoted: Vec<String> = library.patterns().iter().map(|p| format!("'{p}'")).collect();
    let definition = format!(
        "Use {} and similar phrases in your {} based on the input {}.",
        quoted.join(", "),
        task.output_labels[0].to_lowercase(),
        task.input_labels[0].to_lowercase(),
    );
    let mut out = ReframedInstruction::unchanged(task, TechniqueTag::Pattern);
    if definition != task.definition {
        out.audit.push(ChangeRecord::new(
            AuditSection::Definition,
            task.definition.clone(),
            definition.clone(),
            "pattern:replace-definition",
        ));
    }
    out.definition = definition;
    out.patterns_used = Some(library.patterns().to_vec());
    out
}

// ------------------------------------------------------------ specialization

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecializationSpec {
    pub directive: String,
    #[serde(default)]
    pub drop_sections: Vec<Section>,
    #[serde(default)]
    pub drop_sentence_markers: Vec<String>,
}

/// Leads with a task-specific directive and drops generic or repeated statements.
pub fn specialize(task: &TaskInstruction, spec: &SpecializationSpec) -> Result<ReframedInstruction, ReframeError> {
    let directive = spec.directive.trim();
    if directive.is_empty() {
        return Err(ReframeError::EmptyDirective);
    }
    if spec.drop_sections.contains(&Section::Definition) {
        return Err(ReframeError::Config("the definition cannot be dropped".into()));
    }
    let markers: Vec<String> = spec.drop_sentence_markers.iter().map(|m| m.to_lowercase()).collect();
    let mut out = ReframedInstruction::unchanged(task, TechniqueTag::Specialization);
    let mut replay = InstructionSections::of_task(task);

    let mut retained: Vec<String> = Vec::new();
    let mut dropped: Vec<(String, &str)> = Vec::new();
    for sentence in split_sentences(&task.definition) {
        let lower = sentence.to_lowercase();
        if markers.iter().any(|m| lower.contains(m)) {
            dropped.push((sentence, "specialize:drop-marker"));
        } else if retained.contains(&sentence) {
            dropped.push((sentence, "specialize:drop-duplicate"));
        } else {
            retained.push(sentence);
        }
    }
    for (sentence, rule) in dropped.into_iter().rev() {
        let r = ChangeRecord::new(AuditSection::Definition, sentence, "", rule);
        replay.apply(&r).map_err(|e| ReframeError::Audit(e.to_string()))?;
        out.audit.push(r);
    }

    let mut definition = directive.to_string();
    if !retained.is_empty() {
        definition.push(' ');
        definition.push_str(&retained.join(" "));
    }
    let r = ChangeRecord::new(AuditSection::Definition, replay.definition.clone(), definition.clone(), "specialize:directive");
    replay.apply(&r).map_err(|e| ReframeError::Audit(e.to_string()))?;
    out.audit.push(r);
    out.definition = definition;

    for section in &spec.drop_sections {
        if let Some(text) = task.section(*section) {
            out.audit.push(ChangeRecord::new((*section).into(), text, "", "specialize:drop-section"));
            match section {
                Section::EmphasisCaution => out.emphasis_caution = None,
                Section::ThingsToAvoid => out.things_to_avoid = None,
                Section::PromptLine => out.prompt_line = None,
                Section::Definition => unreachable!(),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reframe::reconstruct;
    use crate::TaskCategory;

    fn task(definition: &str) -> TaskInstruction {
        TaskInstruction {
            id: "t".into(),
            title: "t".into(),
            definition: definition.into(),
            emphasis_caution: None,
            things_to_avoid: None,
            prompt_line: None,
            category: TaskCategory::QG,
            input_labels: vec!["Context".into()],
            output_labels: vec!["Question".into()],
            positive_examples: vec![],
            instances: vec![],
        }
    }

    fn example(output: &str) -> Example {
        Example {
            inputs: [("Sentence".to_string(), "s".to_string())].into_iter().collect(),
            outputs: [("Question".to_string(), output.to_string())].into_iter().collect(),
            explanation: None,
        }
    }

    #[test]
    fn itemize_rewrites_length_limit() {
        let r = itemize(&task("Write a sentence. It should not have more than 4 words."));
        assert_eq!(r.definition, "Write a sentence.");
        assert_eq!(r.bullets.as_deref(), Some(&["It should have a maximum of 4 words.".to_string()][..]));
        assert_eq!(reconstruct(&task("Write a sentence. It should not have more than 4 words."), &r.audit).unwrap(), r.sections());
    }

    #[test]
    fn itemize_single_sentence_warns() {
        let r = itemize(&task("Write a story."));
        assert_eq!(r.definition, "Write a story.");
        assert_eq!(r.bullets, Some(vec![]));
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn itemize_is_idempotent_on_bulleted_input() {
        let t = task("Write a sentence.\n- It should start with 'What'.\n- It should mention \"Patrick\".");
        let r = itemize(&t);
        assert_eq!(r.rendered_definition(), t.definition);
    }

    #[test]
    fn itemize_merges_sections() {
        let mut t = task("Write a question. Keep it short.");
        t.things_to_avoid = Some("1. Don't use slang. 2. Do not ask questions that are not about the text.".into());
        let r = itemize(&t);
        assert_eq!(
            r.bullets.clone().unwrap(),
            vec!["Keep it short.", "Avoid using slang.", "Ask questions that are about the text."]
        );
        assert_eq!(r.things_to_avoid, None);
        assert_eq!(reconstruct(&t, &r.audit).unwrap(), r.sections());
    }

    #[test]
    fn restraint_forms() {
        let space = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            restraint_sentence(&space(&["Number", "Date", "Span"])).unwrap(),
            "Answer either Number, Date or Span?"
        );
        assert_eq!(restraint_sentence(&space(&["Yes", "No"])).unwrap(), "Answer either Yes or No?");
        assert_eq!(restraint_sentence(&space(&["Yes"])).unwrap(), "Answer Yes?");
        assert_eq!(restraint_sentence(&[]), Err(ReframeError::EmptyOutputSpace));
        assert!(matches!(restraint_sentence(&space(&["A", "A"])), Err(ReframeError::InvalidOutputSpace(_))));
    }

    #[test]
    fn restrain_only_adds_constraint() {
        let t = task("Classify it.");
        let r = restrain(&t, &["A".into(), "B".into()]).unwrap();
        assert_eq!(r.apply_to(&t), t);
        assert_eq!(r.constraint.as_deref(), Some("Answer either A or B?"));
        assert_eq!(r.techniques, vec![TechniqueTag::Restraining]);
    }

    #[test]
    fn mine_leading_ngrams() {
        let examples = [
            example("How long did X last?"),
            example("How long will Y take?"),
            example("What is the duration of Z?"),
        ];
        // Leading n-gram counts: how=2, how long=2, how long did=1, how long will=1,
        // what=1, what is=1, what is the=1. Frequent (>=2): how, how long; "how" is a
        // strict prefix of "how long" with equal count.
        let lib = mine_patterns(&examples, "Question", 3, 2).unwrap();
        assert_eq!(lib.patterns(), &["how long".to_string()]);
        assert_eq!(lib.source(), PatternSource::Mined);

        let single = mine_patterns(&examples[..1], "Question", 3, 1).unwrap();
        assert_eq!(single.patterns(), &["how long did".to_string()]);

        let disjoint = [example("Alpha beta"), example("Gamma delta")];
        assert_eq!(mine_patterns(&disjoint, "Question", 3, 2), Err(ReframeError::NoPatternsFound));
        assert_eq!(
            mine_patterns(&disjoint, "Answer", 3, 1),
            Err(ReframeError::LabelMissing("Answer".into()))
        );
        assert!(mine_patterns(&disjoint, "Question", 7, 1).is_err());
    }

    #[test]
    fn patterns_sentence() {
        let mut t = task("Ask about duration.");
        t.input_labels = vec!["Sentence".into()];
        let lib = PatternLibrary::supplied(["how long"]).unwrap();
        let r = apply_patterns(&t, &lib);
        assert_eq!(r.definition, "Use 'how long' and similar phrases in your question based on the input sentence.");
        let again = apply_patterns(&r.apply_to(&t), &lib);
        assert_eq!(again.definition, r.definition);
        assert!(again.audit.is_empty());
    }

    #[test]
    fn library_dedupes_case_insensitively() {
        let lib = PatternLibrary::supplied(["How long", "how long", " what "]).unwrap();
        assert_eq!(lib.patterns(), &["How long".to_string(), "what".to_string()]);
        assert!(PatternLibrary::supplied(Vec::<String>::new()).is_err());
        assert!(PatternLibrary::supplied([" "]).is_err());
        let mixed = lib.merge(PatternLibrary::new(["why might"], PatternSource::Mined).unwrap());
        assert_eq!(mixed.source(), PatternSource::Mixed);
    }

    #[test]
    fn specialize_additive_and_sections() {
        let mut t = task("Answer the question. Use the passage.");
        t.things_to_avoid = Some("Don't guess.".into());
        let spec = SpecializationSpec {
            directive: "Calculate the answer.".into(),
            drop_sections: vec![Section::ThingsToAvoid],
            drop_sentence_markers: vec![],
        };
        let r = specialize(&t, &spec).unwrap();
        assert_eq!(r.definition, "Calculate the answer. Answer the question. Use the passage.");
        assert_eq!(r.things_to_avoid, None);
        assert_eq!(r.audit.iter().filter(|a| a.rule == "specialize:drop-section").count(), 1);
        assert_eq!(reconstruct(&t, &r.audit).unwrap(), r.sections());
    }

    #[test]
    fn specialize_drops_exact_duplicates() {
        let t = task("Be brief. Answer it. Be brief.");
        let spec = SpecializationSpec { directive: "Count.".into(), drop_sections: vec![], drop_sentence_markers: vec![] };
        let r = specialize(&t, &spec).unwrap();
        assert_eq!(r.definition, "Count. Be brief. Answer it.");
        assert_eq!(reconstruct(&t, &r.audit).unwrap(), r.sections());
    }

    #[test]
    fn specialize_rejects_empty_directive() {
        let spec = SpecializationSpec { directive: "  ".into(), drop_sections: vec![], drop_sentence_markers: vec![] };
        assert_eq!(specialize(&task("x"), &spec), Err(ReframeError::EmptyDirective));
    }
}
