//! Echo-scoring client for OpenAI-compatible `/v1/completions` endpoints.
//!
//! The candidate is appended to the prompt and sent with `echo: true`,
//! `max_tokens: 0` and `logprobs` set, so the response carries per-token
//! log-probabilities for the prompt itself. The candidate's tokens are the
//! ones whose character span overlaps the appended text.

use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, ContinuationScore, LogprobSource};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    logprobs: Option<EchoLogprobs>,
}

#[derive(Debug, Deserialize)]
struct EchoLogprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    text_offset: Option<Vec<usize>>,
}

/// Extracts the candidate's summed logprob from an echo response body.
pub fn parse_completion_response(body: &[u8], prompt: &str, candidate: &str) -> Result<ContinuationScore> {
    let response: CompletionResponse =
        serde_json::from_slice(body).map_err(|e| Error::Capability(format!("unreadable completion response: {e}")))?;
    let logprobs = response
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.logprobs)
        .ok_or_else(|| Error::Capability("response carries no per-token logprobs".into()))?;
    if logprobs.tokens.len() != logprobs.token_logprobs.len() {
        return Err(Error::Capability(format!(
            "{} tokens but {} token logprobs",
            logprobs.tokens.len(),
            logprobs.token_logprobs.len()
        )));
    }

    let prompt_chars = prompt.chars().count();
    let full_chars = prompt_chars + candidate.chars().count();
    let selected: Vec<usize> = match &logprobs.text_offset {
        Some(offsets) if offsets.len() == logprobs.tokens.len() => (0..offsets.len())
            .filter(|&i| {
                let start = offsets[i];
                let end = start + logprobs.tokens[i].chars().count();
                start < full_chars && end > prompt_chars
            })
            .collect(),
        _ => {
            // Without offsets, walk back from the end until the candidate is covered.
            let mut covered = 0;
            let mut picked = Vec::new();
            for i in (0..logprobs.tokens.len()).rev() {
                if covered >= candidate.len() {
                    break;
                }
                covered += logprobs.tokens[i].len();
                picked.push(i);
            }
            picked.reverse();
            picked
        }
    };
    if selected.is_empty() {
        return Err(Error::Capability(format!(
            "echoed tokens do not cover candidate {candidate:?}"
        )));
    }
    let mut sum = 0.0;
    for &i in &selected {
        let lp = logprobs.token_logprobs[i]
            .ok_or_else(|| Error::Capability(format!("missing logprob for echoed token {i}")))?;
        if !lp.is_finite() {
            return Err(Error::Capability(format!("non-finite logprob for echoed token {i}")));
        }
        sum += lp;
    }
    Ok(ContinuationScore {
        logprob: sum,
        token_count: selected.len() as u32,
    })
}

enum Attempt {
    Done(ContinuationScore),
    Retry(String),
    Fatal(Error),
}

pub struct HttpSource {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    max_attempts: u32,
    backoff_base: Duration,
}

impl HttpSource {
    pub fn new(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| Error::Config("http backend requires endpoint_url".into()))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            api_key,
            max_attempts: config.retry.max_attempts.max(1),
            backoff_base: Duration::from_millis(config.retry.backoff_base_ms),
        })
    }

    fn attempt(&self, model_id: &str, prompt: &str, candidate: &str) -> Attempt {
        let body = json!({
            "model": model_id,
            "prompt": format!("{prompt}{candidate}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 0.0,
        });
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match request.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match parse_completion_response(text.as_bytes(), prompt, candidate) {
                Ok(score) => Attempt::Done(score),
                Err(e) => Attempt::Fatal(e),
            },
            408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            401 | 403 => Attempt::Fatal(Error::BackendUnavailable {
                attempts: 1,
                reason: format!("HTTP {status}: authentication rejected"),
            }),
            _ => Attempt::Fatal(Error::Capability(format!("HTTP {status}: {}", truncate(&text, 200)))),
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl LogprobSource for HttpSource {
    fn score(&self, model_id: &str, prompt: &str, candidate: &str) -> Result<ContinuationScore> {
        let mut last = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                thread::sleep(self.backoff_base * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(model_id, prompt, candidate) {
                Attempt::Done(score) => return Ok(score),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(Error::BackendUnavailable {
            attempts: self.max_attempts,
            reason: last,
        })
    }
}
