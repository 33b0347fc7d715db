use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{check_candidates, Backend, LmError, LmRequest, LmResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Contains(String),
    Regex(String),
}

/// A fixed text, or one text per sample index (picked by request seed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockResponse {
    One(String),
    Samples(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: MatchRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<MockResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

struct CompiledRule {
    rule: MockRule,
    regex: Option<Regex>,
}

impl CompiledRule {
    fn matches(&self, prompt: &str) -> bool {
        match (&self.rule.matcher, &self.regex) {
            (MatchRule::Contains(s), _) => prompt.contains(s.as_str()),
            (MatchRule::Regex(_), Some(re)) => re.is_match(prompt),
            (MatchRule::Regex(_), None) => false,
        }
    }
}

/// Scripted backend: rules are tried in order and the first match wins.
pub struct MockBackend {
    rules: Vec<CompiledRule>,
    strict: bool,
    model_id: String,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>, strict: bool) -> Result<Self, LmError> {
        let rules = rules
            .into_iter()
            .map(|rule| {
                let regex = match &rule.matcher {
                    MatchRule::Regex(p) => Some(Regex::new(p).map_err(|e| LmError::InvalidRequest(e.to_string()))?),
                    MatchRule::Contains(_) => None,
                };
                Ok(CompiledRule { rule, regex })
            })
            .collect::<Result<_, LmError>>()?;
        Ok(MockBackend { rules, strict, model_id: "mock".into() })
    }

    /// Echo-only mock with no rules.
    pub fn echo() -> Self {
        MockBackend { rules: Vec::new(), strict: false, model_id: "mock".into() }
    }

    pub fn from_json(text: &str, strict: bool) -> Result<Self, LmError> {
        let rules: Vec<MockRule> = serde_json::from_str(text).map_err(|e| LmError::InvalidRequest(format!("mock script: {e}")))?;
        Self::new(rules, strict)
    }

    pub fn from_file(path: &Path, strict: bool) -> Result<Self, LmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LmError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, strict)
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

/// The value of the line just above the trailing generation cue.
pub(crate) fn echo_last_input(prompt: &str) -> String {
    let mut lines: Vec<&str> = prompt.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
    if lines.len() > 1 && lines.last().is_some_and(|l| l.ends_with(':')) {
        lines.pop();
    }
    let last = lines.last().copied().unwrap_or("");
    match last.split_once(": ") {
        Some((_, value)) => value.to_string(),
        None => last.to_string(),
    }
}

impl Backend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        request.validate()?;
        let scripted = self
            .rules
            .iter()
            .filter(|r| r.rule.response.is_some())
            .find(|r| r.matches(&request.prompt))
            .and_then(|r| r.rule.response.as_ref());
        let text = match scripted {
            Some(MockResponse::One(text)) => text.clone(),
            Some(MockResponse::Samples(texts)) if !texts.is_empty() => {
                let i = request.seed.unwrap_or(0) as usize % texts.len();
                texts[i].clone()
            }
            Some(MockResponse::Samples(_)) | None if self.strict => return Err(LmError::NoScript),
            _ => echo_last_input(&request.prompt),
        };
        Ok(LmResponse { text, token_logprobs: None, model_id: self.model_id.clone() })
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, LmError> {
        check_candidates(candidates)?;
        let Some(scores) = self
            .rules
            .iter()
            .filter(|r| r.rule.scores.is_some())
            .find(|r| r.matches(prompt))
            .and_then(|r| r.rule.scores.as_ref())
        else {
            return Err(if self.strict { LmError::NoScript } else { LmError::LogprobsUnavailable("no scored rule matched".into()) });
        };
        candidates
            .iter()
            .map(|c| {
                scores
                    .get(c)
                    .copied()
                    .ok_or_else(|| LmError::LogprobsUnavailable(format!("no scripted score for `{c}`")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::DecodingParams;

    fn req(prompt: &str) -> LmRequest {
        LmRequest::new(prompt, &DecodingParams::default())
    }

    const SCRIPT: &str = r#"[
        {"match": {"contains": "Context word: fitness"}, "response": "Objects: treadmill, couch"},
        {"match": {"regex": "^Classify"}, "scores": {"Number": -0.2, "Date": -1.6, "Span": -1.9}},
        {"match": {"contains": "sample"}, "response": ["a", "b", "c"]}
    ]"#;

    #[test]
    fn scripted_lookup_and_echo() {
        let mock = MockBackend::from_json(SCRIPT, false).unwrap();
        let r = mock.complete(&req("Write 2 objects.\n\nContext word: fitness\nObjects:")).unwrap();
        assert_eq!(r.text, "Objects: treadmill, couch");
        let r = mock.complete(&req("Repeat.\n\nSentence: the cat sat\nOutput:")).unwrap();
        assert_eq!(r.text, "the cat sat");
    }

    #[test]
    fn strict_mode_has_no_fallback() {
        let mock = MockBackend::from_json(SCRIPT, true).unwrap();
        assert_eq!(mock.complete(&req("unmatched")), Err(LmError::NoScript));
    }

    #[test]
    fn scores_in_candidate_order() {
        let mock = MockBackend::from_json(SCRIPT, false).unwrap();
        let c = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(mock.score_candidates("Classify it", &c(&["Span", "Number", "Date"])).unwrap(), vec![-1.9, -0.2, -1.6]);
        assert_eq!(mock.score_candidates("Classify it", &c(&["Date"])).unwrap(), vec![-1.6]);
        assert!(matches!(mock.score_candidates("Classify it", &c(&["Date", "Date"])), Err(LmError::InvalidRequest(_))));
        assert!(matches!(mock.score_candidates("other", &c(&["Date"])), Err(LmError::LogprobsUnavailable(_))));
    }

    #[test]
    fn samples_follow_seed() {
        let mock = MockBackend::from_json(SCRIPT, false).unwrap();
        let texts: Vec<String> = (0..4)
            .map(|s| mock.complete(&LmRequest { seed: Some(s), ..req("sample") }).unwrap().text)
            .collect();
        assert_eq!(texts, vec!["a", "b", "c", "a"]);
    }
}
