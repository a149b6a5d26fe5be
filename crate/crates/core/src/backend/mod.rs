//! Per-label probability acquisition.
//!
//! A [`Scorer`] turns a prompt plus candidate continuations into a
//! distribution over the candidates. Each candidate's summed log-probability
//! comes from the [`RecordStore`] when present, otherwise from a remote
//! [`LogprobSource`]; fresh results are written back to the store.

mod http;
mod store;

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use http::{parse_completion_response, HttpSource};
pub use store::{load_offline, record_hash, LogprobRecord, RecordStore};

use crate::error::{Error, Result};
use crate::prob::{softmax_from_logprobs, ProbVector};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogprobRequest {
    pub prompt: String,
    pub candidates: Vec<String>,
    pub model_id: String,
}

impl LogprobRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, candidates: Vec<String>) -> Result<Self> {
        let req = Self {
            prompt: prompt.into(),
            candidates,
            model_id: model_id.into(),
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidDimension("request has no candidates".into()));
        }
        let distinct: HashSet<&String> = self.candidates.iter().collect();
        if distinct.len() != self.candidates.len() {
            return Err(Error::InvalidDimension("request candidates are not distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    30_000
}

impl BackendConfig {
    pub fn offline() -> Self {
        Self {
            kind: BackendKind::Offline,
            endpoint_url: None,
            api_key_env: None,
            max_in_flight: default_in_flight(),
            timeout_ms: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn http(endpoint_url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            ..Self::offline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Http && self.endpoint_url.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Config("http backend requires endpoint_url".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// How candidate token logprobs are reduced to one label score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringRule {
    #[default]
    Sum,
    MeanPerToken,
}

impl ScoringRule {
    pub fn apply(self, record: &LogprobRecord) -> f64 {
        match self {
            ScoringRule::Sum => record.logprob,
            ScoringRule::MeanPerToken => record.logprob / record.token_count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationScore {
    pub logprob: f64,
    pub token_count: u32,
}

/// Anything that can score a continuation remotely.
pub trait LogprobSource: Send + Sync {
    fn score(&self, model_id: &str, prompt: &str, candidate: &str) -> Result<ContinuationScore>;
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Cache-first label scorer. Safe to share across threads; at most
/// `max_in_flight` remote calls run at once and each distinct
/// `(model, prompt, candidate)` is fetched at most once while it succeeds.
pub struct Scorer {
    source: Option<Box<dyn LogprobSource>>,
    store: RecordStore,
    rule: ScoringRule,
    max_in_flight: usize,
    permits: Semaphore,
    pending: Mutex<HashSet<String>>,
    pending_cv: Condvar,
    remote_calls: AtomicUsize,
}

impl Scorer {
    /// Serves only what `store` holds; anything else is a cache miss.
    pub fn offline(store: RecordStore, rule: ScoringRule) -> Self {
        Self::build(None, store, rule, 1)
    }

    pub fn with_source(
        source: Box<dyn LogprobSource>,
        cache: RecordStore,
        rule: ScoringRule,
        max_in_flight: usize,
    ) -> Self {
        Self::build(Some(source), cache, rule, max_in_flight.max(1))
    }

    /// HTTP scorer for `config.kind == Http`, offline otherwise.
    pub fn from_config(config: &BackendConfig, store: RecordStore, rule: ScoringRule) -> Result<Self> {
        config.validate()?;
        match config.kind {
            BackendKind::Offline => Ok(Self::offline(store, rule)),
            BackendKind::Http => Ok(Self::with_source(
                Box::new(HttpSource::new(config)?),
                store,
                rule,
                config.max_in_flight,
            )),
        }
    }

    fn build(source: Option<Box<dyn LogprobSource>>, store: RecordStore, rule: ScoringRule, max_in_flight: usize) -> Self {
        Self {
            source,
            store,
            rule,
            max_in_flight,
            permits: Semaphore::new(max_in_flight),
            pending: Mutex::new(HashSet::new()),
            pending_cv: Condvar::new(),
            remote_calls: AtomicUsize::new(0),
        }
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn rule(&self) -> ScoringRule {
        self.rule
    }

    pub fn is_offline(&self) -> bool {
        self.source.is_none()
    }

    /// Remote calls issued so far, retries excluded.
    pub fn remote_calls(&self) -> usize {
        self.remote_calls.load(Ordering::SeqCst)
    }

    /// The stored or freshly fetched record for one continuation.
    pub fn record(&self, model_id: &str, prompt: &str, candidate: &str) -> Result<LogprobRecord> {
        let hash = record_hash(model_id, prompt, candidate);
        if let Some(r) = self.store.get(&hash) {
            return Ok(r);
        }
        let Some(source) = &self.source else {
            return Err(Error::CacheMiss {
                prompt: prompt.to_string(),
                candidate: candidate.to_string(),
            });
        };
        {
            let mut pending = self.pending.lock().unwrap();
            loop {
                if let Some(r) = self.store.get(&hash) {
                    return Ok(r);
                }
                if pending.insert(hash.clone()) {
                    break;
                }
                pending = self.pending_cv.wait(pending).unwrap();
            }
        }
        let fetched = {
            let _permit = self.permits.acquire();
            self.remote_calls.fetch_add(1, Ordering::SeqCst);
            source.score(model_id, prompt, candidate)
        };
        let result = fetched.and_then(|score| {
            if score.token_count == 0 {
                return Err(Error::Capability(format!("no tokens scored for candidate {candidate:?}")));
            }
            let record = LogprobRecord::new(model_id, prompt, candidate, score.logprob, score.token_count);
            self.store.insert(record.clone())?;
            Ok(record)
        });
        self.pending.lock().unwrap().remove(&hash);
        self.pending_cv.notify_all();
        result
    }

    /// Distribution over the request's candidates.
    pub fn fetch_label_probs(&self, request: &LogprobRequest) -> Result<ProbVector> {
        request.validate()?;
        let scores = request
            .candidates
            .iter()
            .map(|c| {
                self.record(&request.model_id, &request.prompt, c)
                    .map(|r| self.rule.apply(&r))
            })
            .collect::<Result<Vec<_>>>()?;
        softmax_from_logprobs(&scores)
    }

    /// Fetches every distinct uncached continuation up front with up to
    /// `max_in_flight` workers, then resolves each request from the store.
    pub fn fetch_many(&self, requests: &[LogprobRequest]) -> Vec<Result<ProbVector>> {
        if self.source.is_some() {
            let mut seen = HashSet::new();
            let missing: Vec<(&str, &str, &str)> = requests
                .iter()
                .flat_map(|r| r.candidates.iter().map(move |c| (r.model_id.as_str(), r.prompt.as_str(), c.as_str())))
                .filter(|(m, p, c)| {
                    let h = record_hash(m, p, c);
                    !self.store.contains(&h) && seen.insert(h)
                })
                .collect();
            let next = AtomicUsize::new(0);
            let workers = self.max_in_flight.min(missing.len());
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(&(m, p, c)) = missing.get(i) else { break };
                        // Failures resurface below when the request is resolved.
                        let _ = self.record(m, p, c);
                    });
                }
            });
        }
        requests.iter().map(|r| self.fetch_label_probs(r)).collect()
    }
}

/// Writes one record per `(prompt, candidate)` of every request into `sink`
/// and returns how many were written.
pub fn export_records(requests: &[LogprobRequest], scorer: &Scorer, sink: &RecordStore) -> Result<usize> {
    for result in scorer.fetch_many(requests) {
        result?;
    }
    let mut written = 0;
    for request in requests {
        for candidate in &request.candidates {
            sink.insert(scorer.record(&request.model_id, &request.prompt, candidate)?)?;
            written += 1;
        }
    }
    Ok(written)
}

/// One line of the prompts file handed to external exporters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptLine {
    pub model_id: String,
    pub prompt: String,
    pub candidates: Vec<String>,
}

impl From<&LogprobRequest> for PromptLine {
    fn from(r: &LogprobRequest) -> Self {
        Self {
            model_id: r.model_id.clone(),
            prompt: r.prompt.clone(),
            candidates: r.candidates.clone(),
        }
    }
}

/// Serializes requests as the exporter prompts file: one JSON object per
/// line with `model_id`, `prompt`, `candidates`.
pub fn write_prompts_file(requests: &[LogprobRequest]) -> String {
    let mut out = String::new();
    for r in requests {
        out.push_str(&serde_json::to_string(&PromptLine::from(r)).expect("prompt line serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_prompts_file(text: &str) -> Result<Vec<LogprobRequest>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PromptLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let req = LogprobRequest::new(parsed.model_id, parsed.prompt, parsed.candidates).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(req);
    }
    Ok(out)
}
