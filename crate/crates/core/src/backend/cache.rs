use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{cache_key, AgentReply, AgentRequest, Backend, BackendError, ReplySource};
use crate::domain::canonical_json;

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: AgentRequest,
    pub raw_text: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Misses go to the wrapped backend and are appended.
    ReadWrite,
    /// Misses are errors; the wrapped backend is never called.
    ReplayOnly,
}

/// Content-addressed, append-only response cache.
///
/// Readers share an in-memory index; appends to the backing file are
/// serialized behind a mutex. The first entry for a key wins on reload.
pub struct CachedBackend<B> {
    inner: B,
    mode: CacheMode,
    path: Option<PathBuf>,
    index: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn in_memory(inner: B) -> Self {
        Self {
            inner,
            mode: CacheMode::ReadWrite,
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// Opens (or creates) a cache file and loads its entries.
    pub fn open(inner: B, path: impl AsRef<Path>, mode: CacheMode) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let mut index = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| cache_err(&path, e))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| cache_err(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        index.entry(entry.key).or_insert(entry.raw_text);
                    }
                    Err(e) => tracing::warn!(
                        path = %path.display(),
                        line = lineno + 1,
                        "skipping unreadable cache entry: {e}"
                    ),
                }
            }
        }
        let writer = match mode {
            CacheMode::ReadWrite => {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| cache_err(parent, e))?;
                }
                Some(OpenOptions::new().create(true).append(true).open(&path).map_err(|e| cache_err(&path, e))?)
            }
            CacheMode::ReplayOnly => None,
        };
        Ok(Self {
            inner,
            mode,
            path: Some(path),
            index: RwLock::new(index),
            writer: Mutex::new(writer),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Requests forwarded to the wrapped backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn append(&self, entry: &CacheEntry) -> Result<(), BackendError> {
        let mut guard = self.writer.lock().expect("cache writer poisoned");
        if let Some(file) = guard.as_mut() {
            let line = canonical_json(entry).map_err(|e| BackendError::Cache(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| BackendError::Cache(e.to_string()))?;
            file.flush().map_err(|e| BackendError::Cache(e.to_string()))?;
        }
        Ok(())
    }
}

fn cache_err(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError> {
        let started = Instant::now();
        let key = cache_key(request, self.inner.model_id());
        if let Some(text) = self.index.read().expect("cache index poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(AgentReply {
                raw_text: text.clone(),
                source: ReplySource::Cache,
                latency_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
        if self.mode == CacheMode::ReplayOnly {
            return Err(BackendError::CacheMiss(key));
        }

        self.misses.fetch_add(1, Ordering::Relaxed);
        let reply = self.inner.complete(request)?;
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let entry =
            CacheEntry { key: key.clone(), request: request.clone(), raw_text: reply.raw_text.clone(), created_at };
        {
            let mut index = self.index.write().expect("cache index poisoned");
            if index.contains_key(&key) {
                // Another thread filled it while we were waiting on the backend.
                return Ok(reply);
            }
            index.insert(key, reply.raw_text.clone());
        }
        self.append(&entry)?;
        Ok(reply)
    }
}
