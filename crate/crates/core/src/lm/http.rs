use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ureq::Agent;

use super::{check_candidates, Backend, LmError, LmRequest, LmResponse, TokenLogprob};

pub const API_KEY_ENV: &str = "REFRAME_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com".into(),
            model: "gpt-3.5-turbo-instruct".into(),
            timeout_secs: 60,
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

/// Client for `POST {base_url}/v1/completions`.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    agent: Agent,
}

enum Attempt {
    Done(Value),
    Retry(LmError),
}

impl HttpBackend {
    /// Reads the API key from `REFRAME_API_KEY` when set.
    pub fn new(config: HttpConfig) -> Self {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpConfig, api_key: Option<String>) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { config, api_key, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, LmError> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Ok(Attempt::Retry(LmError::Timeout)),
            Err(e) => return Ok(Attempt::Retry(LmError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp
                .body_mut()
                .read_json::<Value>()
                .map(Attempt::Done)
                .map_err(|e| LmError::ProtocolError(format!("unreadable body: {e}"))),
            429 => Ok(Attempt::Retry(LmError::RateLimited { attempts: self.config.max_attempts })),
            500..=599 => Ok(Attempt::Retry(LmError::ProtocolError(format!("server error {status}")))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(LmError::ProtocolError(format!("status {status}: {text}")))
            }
        }
    }

    /// Sends `body`, retrying transport failures, 429 and 5xx with jittered backoff.
    fn post(&self, body: &Value) -> Result<Value, LmError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = LmError::Transport("no attempt made".into());
        for n in 0..attempts {
            if n > 0 {
                let base = self.config.backoff_base_ms.saturating_mul(1 << (n - 1).min(16));
                let jitter = rand::rng().random_range(0..=base / 2);
                thread::sleep(Duration::from_millis(base + jitter));
            }
            match self.attempt(body)? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(e) => {
                    log::warn!("completion attempt {} of {attempts} failed: {e}", n + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

fn parse_choice(body: &Value) -> Result<&Value, LmError> {
    body.get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| LmError::ProtocolError("response has no choices".into()))
}

/// Tokens and logprobs of a choice, with each token's character offset.
fn parse_logprobs(choice: &Value) -> Option<Vec<(usize, TokenLogprob)>> {
    let lp = choice.get("logprobs")?;
    let tokens = lp.get("tokens")?.as_array()?;
    let values = lp.get("token_logprobs")?.as_array()?;
    let offsets = lp.get("text_offset").and_then(Value::as_array);
    tokens
        .iter()
        .zip(values)
        .enumerate()
        .map(|(i, (t, v))| {
            let offset = offsets.and_then(|o| o.get(i)).and_then(Value::as_u64).unwrap_or(0) as usize;
            // The first echoed token has no logprob.
            let logprob = if v.is_null() { 0.0 } else { v.as_f64()? };
            Some((offset, TokenLogprob { token: t.as_str()?.to_string(), logprob }))
        })
        .collect()
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        request.validate()?;
        let mut body = json!({
            "model": self.config.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "stop": request.stop,
            "echo": request.echo_logprobs,
            "logprobs": if request.top_logprobs > 0 || request.echo_logprobs { json!(request.top_logprobs) } else { Value::Null },
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let body = self.post(&body)?;
        let choice = parse_choice(&body)?;
        let text = choice
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| LmError::ProtocolError("choice has no text".into()))?
            .to_string();
        let token_logprobs = parse_logprobs(choice).map(|v| v.into_iter().map(|(_, t)| t).collect());
        let response = LmResponse { text, token_logprobs, model_id: self.config.model.clone() };
        response.validate()?;
        Ok(response)
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, LmError> {
        check_candidates(candidates)?;
        // Candidates follow a `Label:` cue, so they are scored as ` candidate`.
        let sep = if prompt.is_empty() || prompt.ends_with(char::is_whitespace) { "" } else { " " };
        candidates
            .iter()
            .map(|c| {
                let body = json!({
                    "model": self.config.model,
                    "prompt": format!("{prompt}{sep}{c}"),
                    "max_tokens": 0,
                    "temperature": 0.0,
                    "echo": true,
                    "logprobs": 0,
                });
                let body = self.post(&body)?;
                let tokens = parse_logprobs(parse_choice(&body)?)
                    .ok_or_else(|| LmError::LogprobsUnavailable("response carries no token logprobs".into()))?;
                let total: f64 = tokens.iter().filter(|(off, _)| *off >= prompt.len()).map(|(_, t)| t.logprob).sum();
                if total.is_finite() {
                    Ok(total)
                } else {
                    Err(LmError::ProtocolError(format!("non-finite score for `{c}`")))
                }
            })
            .collect()
    }
}
