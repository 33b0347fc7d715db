//! Negation rewriting driven by a shipped lexicon.
//!
//! Lexicon kinds:
//! - `head`: a negated verb phrase (`don't`, `do not`, `never`) that can govern a clause.
//! - `inner`: a second negation inside that clause (`not`, `isn't`, `un-` adjectives).
//! - `phrase`: a single negation with a positive paraphrase.
//! - `complement`: an object with a positive complement, turning `avoid using X` into `use only Y`.
//! - `lead_in`: edits applied to an itemized list's lead-in sentence.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::ReframeError;

/// Bumped whenever the shipped lexicon changes.
pub const LEXICON_VERSION: &str = "1";

const BUILTIN: &str = include_str!("../../data/negation_lexicon.json");
const MAX_PASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Head,
    Inner,
    Phrase,
    Complement,
    LeadIn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub cue: String,
    pub replacement: String,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegationStatus {
    Rewritten,
    DoubleNegationEliminated,
    Unchanged,
}

#[derive(Debug, Clone)]
pub struct NegationLexicon {
    entries: Vec<LexiconEntry>,
}

fn fold(c: char) -> char {
    match c {
        '\u{2019}' | '\u{2018}' => '\'',
        _ => {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        }
    }
}

fn folded(s: &str) -> Vec<char> {
    s.chars().map(fold).collect()
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Word-bounded search for `needle` in `hay`, starting at `from`.
fn find_word(hay: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.is_empty() || hay.len() < needle.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| {
        hay[i..i + needle.len()] == *needle
            && (i == 0 || !is_word(hay[i - 1]) || !is_word(needle[0]))
            && (i + needle.len() == hay.len()
                || !is_word(hay[i + needle.len()])
                || !is_word(needle[needle.len() - 1]))
    })
}

/// Removes `len` chars at `at` plus the whitespace run that follows them
/// (or precedes them, at the end of the text).
fn remove_word(chars: &mut Vec<char>, at: usize, len: usize) {
    let mut end = at + len;
    while end < chars.len() && chars[end].is_whitespace() {
        end += 1;
    }
    let mut start = at;
    if end == chars.len() {
        while start > 0 && chars[start - 1].is_whitespace() {
            start -= 1;
        }
    }
    chars.drain(start..end);
}

fn splice(chars: &mut Vec<char>, at: usize, len: usize, replacement: &str) {
    if replacement.is_empty() {
        remove_word(chars, at, len);
    } else {
        chars.splice(at..at + len, replacement.chars());
    }
}

fn match_case(original: &str, rewritten: String) -> String {
    let (Some(o), Some(r)) = (original.chars().next(), rewritten.chars().next()) else {
        return rewritten;
    };
    if !o.is_alphabetic() || !r.is_alphabetic() {
        return rewritten;
    }
    let fixed: String = if o.is_uppercase() {
        r.to_uppercase().collect()
    } else {
        r.to_lowercase().collect()
    };
    fixed + &rewritten[r.len_utf8()..]
}

impl NegationLexicon {
    /// The shipped lexicon.
    pub fn builtin() -> &'static NegationLexicon {
        static LEXICON: OnceLock<NegationLexicon> = OnceLock::new();
        LEXICON.get_or_init(|| NegationLexicon::from_json(BUILTIN).expect("builtin lexicon is valid"))
    }

    pub fn from_json(content: &str) -> Result<Self, ReframeError> {
        let entries: Vec<LexiconEntry> =
            serde_json::from_str(content).map_err(|e| ReframeError::Config(format!("negation lexicon: {e}")))?;
        Self::new(entries)
    }

    pub fn new(mut entries: Vec<LexiconEntry>) -> Result<Self, ReframeError> {
        if let Some(e) = entries.iter().find(|e| e.cue.trim().is_empty()) {
            return Err(ReframeError::Config(format!("negation lexicon has an empty cue ({:?})", e.kind)));
        }
        // Longest cue first so the most specific phrase wins at a given position.
        entries.sort_by_key(|e| std::cmp::Reverse(e.cue.chars().count()));
        Ok(NegationLexicon { entries })
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    fn of_kind(&self, kind: EntryKind) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    /// Whether the sentence carries any negation cue this lexicon knows about.
    pub fn has_negation_cue(&self, sentence: &str) -> bool {
        let hay = folded(sentence);
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, EntryKind::Head | EntryKind::Inner))
            .any(|e| find_word(&hay, &folded(&e.cue), 0).is_some())
            || find_word(&hay, &folded("no"), 0).is_some()
    }

    fn has_head_cue(&self, text: &str) -> bool {
        let hay = folded(text);
        self.of_kind(EntryKind::Head).any(|e| find_word(&hay, &folded(&e.cue), 0).is_some())
    }

    /// Leftmost head cue: (position, length).
    fn first_head(&self, hay: &[char]) -> Option<(usize, usize)> {
        self.of_kind(EntryKind::Head)
            .filter_map(|e| {
                let cue = folded(&e.cue);
                find_word(hay, &cue, 0).map(|p| (p, cue.len()))
            })
            .min_by_key(|&(p, len)| (p, std::cmp::Reverse(len)))
    }

    fn eliminate_double(&self, chars: &mut Vec<char>) -> bool {
        let hay: Vec<char> = chars.iter().copied().map(fold).collect();
        let Some((head, head_len)) = self.first_head(&hay) else {
            return false;
        };
        let clause_start = head + head_len;
        let clause_end = hay[clause_start..]
            .iter()
            .position(|c| matches!(c, ',' | ';' | ':'))
            .map_or(hay.len(), |p| clause_start + p);
        let clause = &hay[..clause_end];
        let inner = self
            .of_kind(EntryKind::Inner)
            .filter_map(|e| {
                let cue = folded(&e.cue);
                find_word(clause, &cue, clause_start).map(|p| (p, cue.len(), e.replacement.as_str()))
            })
            .min_by_key(|&(p, len, _)| (p, std::cmp::Reverse(len)));
        let Some((at, len, replacement)) = inner else {
            return false;
        };
        // Inner edit first: it sits after the head, so the head offset stays valid.
        splice(chars, at, len, replacement);
        remove_word(chars, head, head_len);
        true
    }

    fn rewrite_phrase(&self, chars: &mut Vec<char>) -> bool {
        let hay: Vec<char> = chars.iter().copied().map(fold).collect();
        let hit = self
            .of_kind(EntryKind::Phrase)
            .filter_map(|e| {
                let cue = folded(&e.cue);
                find_word(&hay, &cue, 0).map(|p| (p, cue.len(), e.replacement.as_str()))
            })
            .min_by_key(|&(p, len, _)| (p, std::cmp::Reverse(len)));
        let Some((at, len, replacement)) = hit else {
            return false;
        };
        splice(chars, at, len, replacement);
        self.apply_complement(chars, at);
        true
    }

    /// `avoid [using] <cue> ...` becomes `use only <complement> ...` when the
    /// lexicon knows a complement for the avoided object.
    fn apply_complement(&self, chars: &mut Vec<char>, at: usize) {
        let hay: Vec<char> = chars.iter().copied().map(fold).collect();
        let rest = &hay[at..];
        let prefix_len = ["avoid using ", "avoid "]
            .iter()
            .map(|p| folded(p))
            .find(|p| rest.starts_with(p))
            .map(|p| p.len());
        let Some(prefix_len) = prefix_len else {
            return;
        };
        let object = &rest[prefix_len..];
        for e in self.of_kind(EntryKind::Complement) {
            let cue = folded(&e.cue);
            if object.starts_with(&cue) && object.get(cue.len()).is_none_or(|c| !is_word(*c)) {
                let replacement = format!("use only {}", e.replacement);
                chars.splice(at..at + prefix_len + cue.len(), replacement.chars());
                return;
            }
        }
    }

    /// `Don't <>`: the negation of an unspecified slot is another slot.
    fn rewrite_placeholder(&self, chars: &mut Vec<char>) -> bool {
        let hay: Vec<char> = chars.iter().copied().map(fold).collect();
        let Some((head, head_len)) = self.first_head(&hay) else {
            return false;
        };
        let rest: String = chars[head + head_len..].iter().collect();
        let slot = rest.trim().trim_end_matches(['.', '!', '?']);
        if slot.starts_with('<') && slot.ends_with('>') && !slot.is_empty() {
            chars.splice(head..head + head_len, "do".chars());
            true
        } else {
            false
        }
    }

    /// Turns a negative instruction sentence into a positive one where the lexicon allows.
    pub fn rewrite(&self, sentence: &str) -> (String, NegationStatus) {
        let mut chars: Vec<char> = sentence.chars().collect();
        let mut double = false;
        let mut changed = false;
        for _ in 0..MAX_PASSES {
            if self.eliminate_double(&mut chars) {
                double = true;
                changed = true;
            } else if self.rewrite_phrase(&mut chars) || self.rewrite_placeholder(&mut chars) {
                changed = true;
            } else {
                break;
            }
        }
        let rewritten = match_case(sentence, chars.into_iter().collect());
        if !changed || self.has_head_cue(&rewritten) {
            return (sentence.to_string(), NegationStatus::Unchanged);
        }
        let status = if double {
            NegationStatus::DoubleNegationEliminated
        } else {
            NegationStatus::Rewritten
        };
        (rewritten, status)
    }

    /// Lead-in edits as (before, after) pairs, in application order.
    pub fn lead_in_edits(&self, lead_in: &str) -> Vec<(String, String)> {
        let mut edits = Vec::new();
        let mut current = lead_in.to_string();
        for e in self.of_kind(EntryKind::LeadIn) {
            if let Some(next) = super::replace_last(&current, &e.cue, &e.replacement) {
                current = next;
                edits.push((e.cue.clone(), e.replacement.clone()));
            }
        }
        edits
    }
}

/// [`NegationLexicon::rewrite`] with the shipped lexicon.
pub fn rewrite_negation(sentence: &str) -> (String, NegationStatus) {
    NegationLexicon::builtin().rewrite(sentence)
}
