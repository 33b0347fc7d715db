//! Content-free contextual calibration over a finite candidate set.
//!
//! The instance inputs are masked with a content-free token (default `N/A`),
//! the candidates are scored under that prompt, and the resulting bias
//! distribution divides the conditioned probabilities before the argmax.
//! Free-form generation is handled by sampling candidates and re-ranking them.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{check_candidates, Backend, DecodingParams, LmError, LmRequest};
use crate::schema::{count_tokens_default, encode_prompt, FieldMap, Instance, PromptEncoding, SchemaError, TaskInstruction};

pub const DEFAULT_CONTENT_FREE_TOKEN: &str = "N/A";
pub const P_CF_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("expected {expected} scores, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("raw probabilities must be finite and non-negative")]
    InvalidScores,
    #[error("calibrated generation needs k >= 2, got {0}")]
    TooFewSamples(usize),
    #[error("at least one content-free token is required")]
    NoContentFreeToken,
}

/// Calibration settings as they appear in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub enabled: bool,
    pub content_free_tokens: Vec<String>,
    /// Samples drawn by calibrated generation.
    pub k: usize,
    /// Sampling temperature for those draws.
    pub temperature: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            enabled: true,
            content_free_tokens: vec![DEFAULT_CONTENT_FREE_TOKEN.into()],
            k: 5,
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub candidates: Vec<String>,
    pub p_cf: Vec<f64>,
    pub content_free_token: String,
    /// Whether any entry was raised to the floor.
    pub floored: bool,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the earliest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn floor_and_normalize(p: Vec<f64>) -> (Vec<f64>, bool) {
    let floored = p.iter().any(|x| *x < P_CF_FLOOR);
    let raised: Vec<f64> = p.into_iter().map(|x| x.max(P_CF_FLOOR)).collect();
    let sum: f64 = raised.iter().sum();
    (raised.into_iter().map(|x| x / sum).collect(), floored)
}

impl CalibrationProfile {
    /// Builds a profile from per-token lists of candidate log-scores; the
    /// softmax distributions are averaged across tokens.
    pub fn from_scores(candidates: &[String], scores_per_token: &[Vec<f64>], token_label: &str) -> Self {
        let n = candidates.len();
        let mut mean = vec![0.0; n];
        for scores in scores_per_token {
            for (m, p) in mean.iter_mut().zip(softmax(scores)) {
                *m += p / scores_per_token.len() as f64;
            }
        }
        let (p_cf, floored) = floor_and_normalize(mean);
        CalibrationProfile { candidates: candidates.to_vec(), p_cf, content_free_token: token_label.to_string(), floored }
    }

    pub fn uniform(candidates: &[String]) -> Self {
        let n = candidates.len();
        CalibrationProfile {
            candidates: candidates.to_vec(),
            p_cf: vec![1.0 / n as f64; n],
            content_free_token: DEFAULT_CONTENT_FREE_TOKEN.into(),
            floored: false,
        }
    }
}

/// Every declared input of the task set to `token`.
fn masked_input(task: &TaskInstruction, token: &str) -> FieldMap {
    task.input_labels.iter().map(|l| (l.clone(), token.to_string())).collect()
}

fn render(task: &TaskInstruction, encoding: &PromptEncoding, input: &FieldMap) -> Result<String, SchemaError> {
    let n = encoding.example_count.min(task.positive_examples.len());
    encode_prompt(task, encoding, &task.positive_examples[..n], input, None)
}

/// Scores `candidates` on the content-free prompt(s) and turns the scores into
/// a floored, normalized bias distribution.
pub fn content_free_profile_with(
    task: &TaskInstruction,
    encoding: &PromptEncoding,
    candidates: &[String],
    lm: &dyn Backend,
    tokens: &[String],
) -> Result<CalibrationProfile, CalibrationError> {
    check_candidates(candidates)?;
    if tokens.is_empty() {
        return Err(CalibrationError::NoContentFreeToken);
    }
    let mut per_token = Vec::with_capacity(tokens.len());
    for token in tokens {
        let prompt = render(task, encoding, &masked_input(task, token))?;
        per_token.push(lm.score_candidates(&prompt, candidates)?);
    }
    Ok(CalibrationProfile::from_scores(candidates, &per_token, &tokens.join("|")))
}

pub fn content_free_profile(
    task: &TaskInstruction,
    encoding: &PromptEncoding,
    candidates: &[String],
    lm: &dyn Backend,
) -> Result<CalibrationProfile, CalibrationError> {
    content_free_profile_with(task, encoding, candidates, lm, &[DEFAULT_CONTENT_FREE_TOKEN.to_string()])
}

/// `q_i = raw_i / p_cf_i`, normalized to sum to one. An all-zero input yields
/// the uniform distribution.
pub fn calibrate_scores(raw: &[f64], profile: &CalibrationProfile) -> Result<Vec<f64>, CalibrationError> {
    if raw.len() != profile.p_cf.len() {
        return Err(CalibrationError::LengthMismatch { expected: profile.p_cf.len(), got: raw.len() });
    }
    if raw.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(CalibrationError::InvalidScores);
    }
    let q: Vec<f64> = raw.iter().zip(&profile.p_cf).map(|(r, p)| r / p).collect();
    let sum: f64 = q.iter().sum();
    if sum == 0.0 {
        return Ok(vec![1.0 / q.len() as f64; q.len()]);
    }
    Ok(q.into_iter().map(|x| x / sum).collect())
}

/// Profiles keyed by task, encoding and candidate set. Concurrent readers,
/// one writer per insertion.
#[derive(Default)]
pub struct ProfileCache {
    profiles: RwLock<HashMap<String, Arc<CalibrationProfile>>>,
}

impl ProfileCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.profiles.read().expect("profile cache").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(
        &self,
        task: &TaskInstruction,
        encoding: &PromptEncoding,
        candidates: &[String],
        lm: &dyn Backend,
        tokens: &[String],
    ) -> Result<Arc<CalibrationProfile>, CalibrationError> {
        let key = serde_json::to_string(&(
            &task.id,
            task.instruction_text(),
            encoding.encoding_id,
            encoding.example_count,
            candidates,
            tokens,
        ))
            .expect("key serializes");
        if let Some(p) = self.profiles.read().expect("profile cache").get(&key) {
            return Ok(p.clone());
        }
        let profile = Arc::new(content_free_profile_with(task, encoding, candidates, lm, tokens)?);
        let mut w = self.profiles.write().expect("profile cache");
        Ok(w.entry(key).or_insert(profile).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub index: usize,
    pub raw: Vec<f64>,
    pub calibrated: Vec<f64>,
    /// The content-free profile hit the probability floor.
    pub floored: bool,
}

/// Scores `labels` on the real instance and returns the calibrated argmax.
pub fn calibrated_classify(
    task: &TaskInstruction,
    instance: &Instance,
    encoding: &PromptEncoding,
    labels: &[String],
    lm: &dyn Backend,
    cache: &ProfileCache,
    tokens: &[String],
) -> Result<Classification, CalibrationError> {
    let profile = cache.get_or_compute(task, encoding, labels, lm, tokens)?;
    let prompt = render(task, encoding, &instance.inputs)?;
    let raw = softmax(&lm.score_candidates(&prompt, labels)?);
    let calibrated = calibrate_scores(&raw, &profile)?;
    let index = argmax(&calibrated);
    Ok(Classification { label: labels[index].clone(), index, raw, calibrated, floored: profile.floored })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub text: String,
    pub tokens: usize,
    pub logprob: f64,
    pub content_free_logprob: f64,
    pub calibrated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub samples: Vec<String>,
    pub candidates: Vec<ScoredCandidate>,
    pub chosen: usize,
    pub floored: bool,
}

/// Samples `k` completions (seeds `seed, seed+1, ...`) and re-ranks the
/// distinct ones by calibrated, length-normalized log-probability.
pub fn calibrated_generate(
    task: &TaskInstruction,
    instance: &Instance,
    encoding: &PromptEncoding,
    lm: &dyn Backend,
    k: usize,
    params: &DecodingParams,
    tokens: &[String],
) -> Result<(String, GenerationTrace), CalibrationError> {
    if k < 2 {
        return Err(CalibrationError::TooFewSamples(k));
    }
    if tokens.is_empty() {
        return Err(CalibrationError::NoContentFreeToken);
    }
    let prompt = render(task, encoding, &instance.inputs)?;
    let base_seed = params.seed.unwrap_or(0);
    let mut samples = Vec::with_capacity(k);
    for i in 0..k as u64 {
        let request = LmRequest::new(prompt.clone(), &DecodingParams { seed: Some(base_seed + i), ..params.clone() });
        samples.push(lm.complete(&request)?.text.trim().to_string());
    }
    let mut distinct: Vec<String> = Vec::new();
    for s in &samples {
        if !distinct.contains(s) {
            distinct.push(s.clone());
        }
    }
    if distinct.len() == 1 {
        let only = ScoredCandidate {
            text: distinct[0].clone(),
            tokens: count_tokens_default(&distinct[0]),
            logprob: 0.0,
            content_free_logprob: 0.0,
            calibrated: 1.0,
        };
        return Ok((distinct.swap_remove(0), GenerationTrace { samples, candidates: vec![only], chosen: 0, floored: false }));
    }

    let lengths: Vec<f64> = distinct.iter().map(|c| count_tokens_default(c).max(1) as f64).collect();
    let normalize = |scores: Vec<f64>| -> Vec<f64> { scores.iter().zip(&lengths).map(|(s, n)| s / n).collect() };
    let real = normalize(lm.score_candidates(&prompt, &distinct)?);
    let mut cf_scores = Vec::with_capacity(tokens.len());
    for token in tokens {
        let cf_prompt = render(task, encoding, &masked_input(task, token))?;
        cf_scores.push(normalize(lm.score_candidates(&cf_prompt, &distinct)?));
    }
    let profile = CalibrationProfile::from_scores(&distinct, &cf_scores, &tokens.join("|"));
    let calibrated = calibrate_scores(&softmax(&real), &profile)?;
    let chosen = argmax(&calibrated);
    let candidates = distinct
        .iter()
        .enumerate()
        .map(|(i, text)| ScoredCandidate {
            text: text.clone(),
            tokens: lengths[i] as usize,
            logprob: real[i],
            content_free_logprob: cf_scores[0][i],
            calibrated: calibrated[i],
        })
        .collect();
    Ok((distinct[chosen].clone(), GenerationTrace { samples, candidates, chosen, floored: profile.floored }))
}
