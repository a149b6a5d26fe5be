//! Newline-delimited logprob records and the append-only store built on them.
//!
//! One JSON object per line, fields in this order:
//!
//! ```text
//! {"model_id":"m","prompt_hash":"<64 hex>","prompt":"...","candidate":" true","logprob":-0.25,"token_count":1}
//! ```
//!
//! `prompt_hash` is the lowercase hex SHA-256 of the length-prefixed fields
//! `model_id`, `prompt`, `candidate`: each field contributes its UTF-8 byte
//! length as a little-endian `u64` followed by its bytes.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Content hash of `(model_id, prompt, candidate)`.
pub fn record_hash(model_id: &str, prompt: &str, candidate: &str) -> String {
    let mut hasher = Sha256::new();
    for field in [model_id, prompt, candidate] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogprobRecord {
    pub model_id: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub candidate: String,
    /// Natural-log sum over the candidate tokens.
    pub logprob: f64,
    pub token_count: u32,
}

impl LogprobRecord {
    pub fn new(
        model_id: impl Into<String>,
        prompt: impl Into<String>,
        candidate: impl Into<String>,
        logprob: f64,
        token_count: u32,
    ) -> Self {
        let (model_id, prompt, candidate) = (model_id.into(), prompt.into(), candidate.into());
        Self {
            prompt_hash: record_hash(&model_id, &prompt, &candidate),
            model_id,
            prompt,
            candidate,
            logprob,
            token_count,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.logprob.is_finite() {
            return Err(format!("non-finite logprob {}", self.logprob));
        }
        if self.token_count == 0 {
            return Err("token_count must be at least 1".into());
        }
        let expected = record_hash(&self.model_id, &self.prompt, &self.candidate);
        if self.prompt_hash != expected {
            return Err(format!("prompt_hash {} does not match content", self.prompt_hash));
        }
        Ok(())
    }

    /// Parses and validates one store line. `line_no` is reported on error.
    pub fn from_line(line: &str, line_no: usize) -> Result<Self> {
        let record: LogprobRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        record.check().map_err(|reason| Error::Parse { line: line_no, reason })?;
        Ok(record)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Records keyed by content hash. Concurrent readers, serialized writers;
/// when opened on a file every insert is appended to it, and on reload the
/// last line for a key wins.
#[derive(Debug, Default)]
pub struct RecordStore {
    records: RwLock<HashMap<String, LogprobRecord>>,
    journal: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = LogprobRecord>) -> Self {
        let store = Self::default();
        {
            let mut map = store.records.write().unwrap();
            for r in records {
                map.insert(r.prompt_hash.clone(), r);
            }
        }
        store
    }

    /// Parses a whole store. Blank lines are skipped.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut map = HashMap::new();
        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            line_no += 1;
            let n = reader.read_line(&mut line).map_err(|e| Error::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
            if n == 0 {
                break;
            }
            let text = line.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let record = LogprobRecord::from_line(text, line_no)?;
            map.insert(record.prompt_hash.clone(), record);
        }
        Ok(Self {
            records: RwLock::new(map),
            journal: None,
            path: None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_reader(text.as_bytes())
    }

    /// Opens (creating if needed) a store whose inserts are appended to `path`.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = if path.exists() {
            load_offline(path)?
        } else {
            Self::default()
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        store.journal = Some(Mutex::new(file));
        store.path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, hash: &str) -> Option<LogprobRecord> {
        self.records.read().unwrap().get(hash).cloned()
    }

    pub fn lookup(&self, model_id: &str, prompt: &str, candidate: &str) -> Option<LogprobRecord> {
        self.get(&record_hash(model_id, prompt, candidate))
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.records.read().unwrap().contains_key(hash)
    }

    pub fn insert(&self, record: LogprobRecord) -> Result<()> {
        if let Some(journal) = &self.journal {
            let mut file = journal.lock().unwrap();
            let mut line = record.to_line();
            line.push('\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
            file.flush().map_err(|e| Error::io(&path, e))?;
        }
        self.records
            .write()
            .unwrap()
            .insert(record.prompt_hash.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records sorted by `(prompt_hash)`.
    pub fn records(&self) -> Vec<LogprobRecord> {
        let mut out: Vec<_> = self.records.read().unwrap().values().cloned().collect();
        out.sort_by(|a, b| a.prompt_hash.cmp(&b.prompt_hash));
        out
    }

    /// One line per record, sorted by hash, newline-terminated.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    /// Atomically replaces `path` with the canonical serialization.
    pub fn write_canonical(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_canonical_string().as_bytes())
    }
}

/// Reads an offline store written by `export` or an external exporter.
pub fn load_offline(path: &Path) -> Result<RecordStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store = RecordStore::from_reader(file)?;
    store.path = Some(path.to_path_buf());
    Ok(store)
}
