#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

pub type Responder = dyn Fn(&str) -> Value + Send + Sync;

#[derive(Default)]
struct State {
    hits: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    statuses: Mutex<VecDeque<u16>>,
    auth: Mutex<Vec<Option<String>>>,
    bodies: Mutex<Vec<Value>>,
}

/// Minimal OpenAI-style completions endpoint answering echo requests.
pub struct MockServer {
    pub url: String,
    state: Arc<State>,
}

/// Splits before every space, so `" true"` is one token.
pub fn whitespace_tokens(text: &str) -> Vec<(usize, String)> {
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (i, ch) in text.chars().enumerate() {
        match tokens.last_mut() {
            Some((_, tok)) if ch != ' ' => tok.push(ch),
            _ => tokens.push((i, ch.to_string())),
        }
    }
    tokens
}

/// Every token gets `-0.05 * chars`; the first token has no logprob.
pub fn length_penalty_response(prompt: &str) -> Value {
    let tokens = whitespace_tokens(prompt);
    let logprobs: Vec<Value> = tokens
        .iter()
        .enumerate()
        .map(|(i, (_, t))| if i == 0 { Value::Null } else { json!(-0.05 * t.chars().count() as f64) })
        .collect();
    json!({
        "choices": [{
            "text": prompt,
            "logprobs": {
                "tokens": tokens.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(),
                "token_logprobs": logprobs,
                "text_offset": tokens.iter().map(|(o, _)| *o).collect::<Vec<_>>(),
            }
        }]
    })
}

impl MockServer {
    pub fn start(delay: Duration) -> Self {
        Self::with_responder(delay, Arc::new(length_penalty_response))
    }

    pub fn with_responder(delay: Duration, responder: Arc<Responder>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let state = Arc::new(State::default());
        let accept_state = state.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let state = accept_state.clone();
                let responder = responder.clone();
                thread::spawn(move || handle(stream, &state, &*responder, delay));
            }
        });
        Self { url, state }
    }

    /// Statuses returned, in order, before the server answers normally.
    pub fn script(&self, statuses: &[u16]) {
        self.state.statuses.lock().unwrap().extend(statuses);
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn auth_headers(&self) -> Vec<Option<String>> {
        self.state.auth.lock().unwrap().clone()
    }

    pub fn bodies(&self) -> Vec<Value> {
        self.state.bodies.lock().unwrap().clone()
    }
}

fn handle(stream: TcpStream, state: &State, responder: &Responder, delay: Duration) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut content_length = 0;
    let mut auth = None;
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                "authorization" => auth = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    state.hits.fetch_add(1, Ordering::SeqCst);
    state.auth.lock().unwrap().push(auth);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);
    thread::sleep(delay);
    state.in_flight.fetch_sub(1, Ordering::SeqCst);

    let scripted = state.statuses.lock().unwrap().pop_front();
    let (status, payload) = match scripted {
        Some(code) => (code, json!({"error": {"message": "scripted failure"}}).to_string()),
        None => {
            let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            state.bodies.lock().unwrap().push(request.clone());
            let prompt = request["prompt"].as_str().unwrap_or_default().to_string();
            (200, responder(&prompt).to_string())
        }
    };
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// Deterministic stand-in model: each continuation gets a logprob in
/// `[-6, 0)` derived from the record hash.
pub struct HashSource;

impl taskcal::backend::LogprobSource for HashSource {
    fn score(&self, model_id: &str, prompt: &str, candidate: &str) -> taskcal::Result<taskcal::backend::ContinuationScore> {
        let h = taskcal::backend::record_hash(model_id, prompt, candidate);
        let x = u32::from_str_radix(&h[..8], 16).unwrap() as f64 / u32::MAX as f64;
        Ok(taskcal::backend::ContinuationScore {
            logprob: -6.0 * x - 1e-3,
            token_count: 1,
        })
    }
}

pub fn hash_scorer() -> taskcal::backend::Scorer {
    taskcal::backend::Scorer::with_source(
        Box::new(HashSource),
        taskcal::backend::RecordStore::in_memory(),
        taskcal::backend::ScoringRule::Sum,
        4,
    )
}

/// Random distribution over `c` labels.
pub fn random_dist(rng: &mut impl rand::Rng, c: usize) -> taskcal::prob::ProbVector {
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(1e-6..1.0)).collect();
    taskcal::prob::ProbVector::normalize(&w).unwrap()
}

pub fn random_triple(rng: &mut impl rand::Rng, c: usize) -> taskcal::prob::ProbTriple {
    taskcal::prob::ProbTriple::new(random_dist(rng, c), random_dist(rng, c), random_dist(rng, c)).unwrap()
}
