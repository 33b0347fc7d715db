use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{check_candidates, Backend, LmError, LmRequest, LmResponse};

/// What was asked of the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoredCall {
    Complete { request: LmRequest },
    Score { prompt: String, candidates: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoredResult {
    Completion(LmResponse),
    Scores(Vec<f64>),
}

/// One line of the store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub key: String,
    pub request: StoredCall,
    pub response: StoredResult,
}

/// Sorted-key JSON with floats at nine decimals; the hashing input for keys.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&value.to_string()),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => out.push_str(&i.to_string()),
            (_, Some(u), _) => out.push_str(&u.to_string()),
            (_, _, Some(f)) => out.push_str(&format!("{f:.9}")),
            _ => out.push_str(&n.to_string()),
        },
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
    }
}

impl StoredCall {
    pub fn key(&self, model_id: &str) -> String {
        let value = serde_json::json!({ "model_id": model_id, "call": self });
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }
}

/// Append-only JSON-lines response cache. Reads are concurrent; appends are
/// serialized and synced to disk one record at a time.
pub struct ReplayStore {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, StoredResult>>,
    file: Mutex<Option<File>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        ReplayStore { path: None, entries: RwLock::new(HashMap::new()), file: Mutex::new(None) }
    }

    /// Opens (or creates) the store at `path`, loading existing records.
    pub fn open(path: &Path) -> Result<Self, LmError> {
        let store_err = |e: std::io::Error| LmError::Store(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(store_err)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(store_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ReplayRecord = serde_json::from_str(&line)
                    .map_err(|e| LmError::Store(format!("{} line {}: {e}", path.display(), n + 1)))?;
                entries.insert(record.key, record.response);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(store_err)?;
        }
        Ok(ReplayStore { path: Some(path.to_path_buf()), entries: RwLock::new(entries), file: Mutex::new(None) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<StoredResult> {
        self.entries.read().expect("store lock").get(key).cloned()
    }

    /// Records a response. A key already present is left untouched.
    pub fn append(&self, record: ReplayRecord) -> Result<(), LmError> {
        let mut file = self.file.lock().expect("store lock");
        if self.entries.read().expect("store lock").contains_key(&record.key) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let io = |e: std::io::Error| LmError::Store(format!("{}: {e}", path.display()));
            if file.is_none() {
                *file = Some(OpenOptions::new().create(true).append(true).open(path).map_err(io)?);
            }
            let f = file.as_mut().expect("opened above");
            let line = serde_json::to_string(&record).map_err(|e| LmError::Store(e.to_string()))?;
            writeln!(f, "{line}").map_err(io)?;
            f.sync_data().map_err(io)?;
        }
        self.entries.write().expect("store lock").insert(record.key, record.response);
        Ok(())
    }

    /// SHA-256 of the store file, or of nothing when the store is in memory or absent.
    pub fn content_hash(&self) -> String {
        let bytes = self.path.as_ref().and_then(|p| std::fs::read(p).ok()).unwrap_or_default();
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Serves cached responses and records misses from an inner backend. Without
/// an inner backend every miss is a [`LmError::ReplayMiss`].
pub struct ReplayBackend {
    inner: Option<Arc<dyn Backend>>,
    store: Arc<ReplayStore>,
    model_id: String,
}

impl ReplayBackend {
    pub fn new(inner: Arc<dyn Backend>, store: Arc<ReplayStore>) -> Self {
        let model_id = inner.model_id().to_string();
        ReplayBackend { inner: Some(inner), store, model_id }
    }

    pub fn replay_only(model_id: impl Into<String>, store: Arc<ReplayStore>) -> Self {
        ReplayBackend { inner: None, store, model_id: model_id.into() }
    }

    pub fn store(&self) -> &Arc<ReplayStore> {
        &self.store
    }

    fn lookup(
        &self,
        call: StoredCall,
        fetch: impl FnOnce(&dyn Backend) -> Result<StoredResult, LmError>,
    ) -> Result<StoredResult, LmError> {
        let key = call.key(&self.model_id);
        if let Some(hit) = self.store.get(&key) {
            return Ok(hit);
        }
        let inner = self.inner.as_ref().ok_or_else(|| LmError::ReplayMiss(key.clone()))?;
        let result = fetch(inner.as_ref())?;
        self.store.append(ReplayRecord { key, request: call, response: result.clone() })?;
        Ok(result)
    }
}

impl Backend for ReplayBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        request.validate()?;
        let call = StoredCall::Complete { request: request.clone() };
        match self.lookup(call, |b| b.complete(request).map(StoredResult::Completion))? {
            StoredResult::Completion(r) => Ok(r),
            StoredResult::Scores(_) => Err(LmError::Store("stored scores for a completion key".into())),
        }
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, LmError> {
        check_candidates(candidates)?;
        let call = StoredCall::Score { prompt: prompt.to_string(), candidates: candidates.to_vec() };
        match self.lookup(call, |b| b.score_candidates(prompt, candidates).map(StoredResult::Scores))? {
            StoredResult::Scores(s) => Ok(s),
            StoredResult::Completion(_) => Err(LmError::Store("stored completion for a score key".into())),
        }
    }
}

/// Counts calls reaching the wrapped backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend { inner, calls: AtomicUsize::new(0), prompts: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Prompts seen so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }

    fn note(&self, prompt: &str) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().expect("prompt log").push(prompt.to_string());
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        self.note(&request.prompt);
        self.inner.complete(request)
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, LmError> {
        self.note(prompt);
        self.inner.score_candidates(prompt, candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{DecodingParams, MockBackend};

    #[test]
    fn canonical_form_sorts_keys_and_fixes_floats() {
        let a: Value = serde_json::from_str(r#"{"b": 0.1, "a": [1, "x"]}"#).unwrap();
        assert_eq!(canonical_json(&a), r#"{"a":[1,"x"],"b":0.100000000}"#);
        let b: Value = serde_json::from_str(r#"{"a": [1, "x"], "b": 0.1000000000001}"#).unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
    }

    #[test]
    fn second_call_served_from_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let counting = Arc::new(CountingBackend::new(MockBackend::echo()));
        let store = Arc::new(ReplayStore::open(&path).unwrap());
        let replay = ReplayBackend::new(counting.clone(), store);
        let req = LmRequest::new("Say.\n\nText: hello\nOutput:", &DecodingParams::default());
        let first = replay.complete(&req).unwrap();
        let second = replay.complete(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(counting.calls(), 1);

        let reopened = Arc::new(ReplayStore::open(&path).unwrap());
        assert_eq!(reopened.len(), 1);
        let offline = ReplayBackend::replay_only("mock", reopened);
        assert_eq!(offline.complete(&req).unwrap(), first);
        let other = LmRequest::new("different", &DecodingParams::default());
        assert!(matches!(offline.complete(&other), Err(LmError::ReplayMiss(_))));
    }

    #[test]
    fn keys_depend_on_model_and_content() {
        let req = LmRequest::new("p", &DecodingParams::default());
        let call = StoredCall::Complete { request: req.clone() };
        assert_eq!(call.key("m"), StoredCall::Complete { request: req.clone() }.key("m"));
        assert_ne!(call.key("m"), call.key("n"));
        let hotter = StoredCall::Complete { request: LmRequest { temperature: 0.7, ..req } };
        assert_ne!(call.key("m"), hotter.key("m"));
    }
}
