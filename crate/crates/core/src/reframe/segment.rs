//! Rule-based sentence segmentation for instruction prose.
//!
//! A sentence ends at `.`, `!` or `?` (plus any closing quotes or brackets) when
//! followed by end of text, or by whitespace and then an uppercase letter, an
//! enumerator such as `2.`, or a quote that opens an uppercase word.
//! Abbreviations from a fixed stop-list and short enumerators (`1.`, `A.`) never
//! end a sentence.

const ABBREVIATIONS: [&str; 5] = ["e.g.", "i.e.", "etc.", "Mr.", "Dr."];
const CLOSERS: [char; 6] = ['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: [char; 5] = ['"', '\'', '(', '\u{201c}', '\u{2018}'];

/// Splits `text` into trimmed sentences.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len() && CLOSERS.contains(&chars[end]) {
                end += 1;
            }
            if c == '.' && end == i + 1 && protected_period(&chars, start, i) {
                i += 1;
                continue;
            }
            if boundary_follows(&chars, end) {
                push_trimmed(&mut sentences, &chars[start..end]);
                start = end;
                i = end;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        push_trimmed(&mut sentences, &chars[start..]);
    }
    sentences
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// The word that ends with the period at `dot`, without leading punctuation.
fn word_before(chars: &[char], start: usize, dot: usize) -> String {
    let mut b = dot;
    while b > start && !chars[b - 1].is_whitespace() {
        b -= 1;
    }
    let word: String = chars[b..=dot].iter().collect();
    word.trim_start_matches(|c: char| OPENERS.contains(&c)).to_string()
}

fn protected_period(chars: &[char], start: usize, dot: usize) -> bool {
    let word = word_before(chars, start, dot);
    if ABBREVIATIONS.contains(&word.as_str()) {
        return true;
    }
    // Ellipsis continues the sentence unless it ends the text.
    if dot + 1 < chars.len() && chars[dot + 1] == '.' || dot > 0 && chars[dot - 1] == '.' {
        return true;
    }
    is_enumerator(&word)
}

/// `1.`, `12.`, `A.`: list markers, not sentence ends.
fn is_enumerator(word: &str) -> bool {
    let body = &word[..word.len() - 1];
    (!body.is_empty() && body.len() <= 2 && body.chars().all(|c| c.is_ascii_digit()))
        || (body.len() == 1 && body.chars().all(|c| c.is_ascii_uppercase()))
}

fn boundary_follows(chars: &[char], end: usize) -> bool {
    if end >= chars.len() {
        return true;
    }
    if !chars[end].is_whitespace() {
        return false;
    }
    let mut j = end;
    while j < chars.len() && chars[j].is_whitespace() {
        j += 1;
    }
    if j >= chars.len() {
        return true;
    }
    let next = chars[j];
    if next.is_uppercase() {
        return true;
    }
    if OPENERS.contains(&next) {
        return chars.get(j + 1).is_some_and(|c| c.is_uppercase());
    }
    if next.is_ascii_digit() {
        let mut k = j;
        while k < chars.len() && chars[k].is_ascii_digit() {
            k += 1;
        }
        return k - j <= 2
            && chars.get(k).is_some_and(|c| *c == '.' || *c == ')')
            && chars.get(k + 1).is_none_or(|c| c.is_whitespace());
    }
    false
}

/// Strips a leading list marker (`1. `, `2) `, `- `, `A. `).
pub fn strip_enumerator(sentence: &str) -> &str {
    let s = sentence.trim_start();
    if let Some(rest) = s.strip_prefix("- ").or_else(|| s.strip_prefix("-")) {
        return rest.trim_start();
    }
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if (1..=2).contains(&digits) {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim_start();
        }
    }
    let mut it = s.chars();
    if let (Some(first), Some('.'), Some(' ')) = (it.next(), it.next(), it.next()) {
        if first.is_ascii_uppercase() {
            return s[3..].trim_start();
        }
    }
    s
}
