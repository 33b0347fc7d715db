//! Completion backends: an OpenAI-compatible HTTP client, a scripted mock and a
//! record/replay cache that lets experiments re-run offline.

mod http;
mod mock;
mod replay;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MatchRule, MockBackend, MockResponse, MockRule};
pub use replay::{canonical_json, CountingBackend, ReplayBackend, ReplayRecord, ReplayStore, StoredCall, StoredResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no script rule matched the prompt")]
    NoScript,
    #[error("backend cannot score candidates: {0}")]
    LogprobsUnavailable(String),
    #[error("replay store has no entry for key {0}")]
    ReplayMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay store: {0}")]
    Store(String),
}

/// Decoding settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub top_logprobs: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { max_tokens: 64, temperature: 0.0, stop: vec!["\n\n".into()], top_logprobs: 0, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub echo_logprobs: bool,
    pub top_logprobs: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl LmRequest {
    pub fn new(prompt: impl Into<String>, params: &DecodingParams) -> Self {
        LmRequest {
            prompt: prompt.into(),
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            stop: params.stop.clone(),
            echo_logprobs: false,
            top_logprobs: params.top_logprobs,
            seed: params.seed,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidRequest(m.to_string()));
        if self.prompt.is_empty() {
            return bad("empty prompt");
        }
        if self.max_tokens == 0 && !self.echo_logprobs {
            return bad("max_tokens must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a non-negative number");
        }
        if self.stop.len() > 4 || self.stop.iter().any(String::is_empty) {
            return bad("at most 4 non-empty stop sequences");
        }
        if self.top_logprobs > 5 {
            return bad("top_logprobs must be in [0, 5]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub model_id: String,
}

impl LmResponse {
    pub fn validate(&self) -> Result<(), LmError> {
        for t in self.token_logprobs.iter().flatten() {
            if !t.logprob.is_finite() || t.logprob > 0.0 {
                return Err(LmError::ProtocolError(format!("logprob {} for `{}`", t.logprob, t.token)));
            }
        }
        Ok(())
    }
}

/// A completion backend. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError>;

    /// Total log-probability of each candidate as a continuation of `prompt`,
    /// in candidate order.
    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, LmError>;
}

/// Rejects empty or duplicated candidate lists.
pub fn check_candidates(candidates: &[String]) -> Result<(), LmError> {
    if candidates.is_empty() {
        return Err(LmError::InvalidRequest("no candidates".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = candidates.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(LmError::InvalidRequest(format!("duplicate candidate `{dup}`")));
    }
    Ok(())
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        (**self).complete(request)
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, LmError> {
        (**self).score_candidates(prompt, candidates)
    }
}
