//! Content-addressed, append-only store of oracle responses.
//!
//! File layout: a sequence of records, each written as the decimal byte length
//! of a JSON document, a newline, the JSON document, and a newline. The
//! in-memory index is rebuilt from the file on open.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ChoiceDistribution, ChoiceSpec, Oracle, OracleError, Query};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache file {path} is corrupt at byte {offset}: {reason}")]
    CacheCorrupt {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("cache I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallRecord {
    pub key: String,
    pub oracle: String,
    pub labels: Vec<String>,
    pub target: String,
    pub distribution: ChoiceDistribution,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub hits: u64,
    pub misses: u64,
}

fn push_part(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

/// SHA-256 over (prompt bytes, ordered labels, target, oracle identity), hex encoded.
pub fn cache_key(prompt: &str, spec: &ChoiceSpec, oracle_identity: &str) -> String {
    let mut h = Sha256::new();
    push_part(&mut h, prompt.as_bytes());
    h.update((spec.labels().len() as u64).to_le_bytes());
    for label in spec.labels() {
        push_part(&mut h, label.as_bytes());
    }
    push_part(&mut h, spec.target().as_bytes());
    push_part(&mut h, oracle_identity.as_bytes());
    hex::encode(h.finalize())
}

pub struct ResponseCache {
    path: Option<PathBuf>,
    writer: Mutex<Option<BufWriter<File>>>,
    index: RwLock<HashMap<String, ChoiceDistribution>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for ResponseCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResponseCache")
            .field("path", &self.path)
            .field("stats", &self.stats())
            .finish()
    }
}

fn parse_records(path: &Path, bytes: &[u8]) -> Result<Vec<CallRecord>, CacheError> {
    let corrupt = |offset: usize, reason: String| CacheError::CacheCorrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    let mut records = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let newline = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt(pos, "truncated length prefix".into()))?;
        let len: usize = std::str::from_utf8(&bytes[pos..pos + newline])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(pos, "invalid length prefix".into()))?;
        let start = pos + newline + 1;
        let end = start + len;
        if end + 1 > bytes.len() || bytes[end] != b'\n' {
            return Err(corrupt(start, "truncated record".into()));
        }
        let record: CallRecord = serde_json::from_slice(&bytes[start..end])
            .map_err(|e| corrupt(start, format!("invalid record: {e}")))?;
        records.push(record);
        pos = end + 1;
    }
    Ok(records)
}

impl ResponseCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            writer: Mutex::new(None),
            index: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) a cache file and rebuilds the index from it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(io)?;
        }
        let index = parse_records(&path, &bytes)?
            .into_iter()
            .map(|r| (r.key, r.distribution))
            .collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(ResponseCache {
            path: Some(path),
            writer: Mutex::new(Some(BufWriter::new(file))),
            index: RwLock::new(index),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<ChoiceDistribution> {
        self.index.read().unwrap().get(key).cloned()
    }

    pub fn insert(
        &self,
        key: String,
        oracle: &str,
        spec: &ChoiceSpec,
        distribution: &ChoiceDistribution,
    ) -> Result<(), CacheError> {
        {
            let mut writer = self.writer.lock().unwrap();
            if let Some(w) = writer.as_mut() {
                let record = CallRecord {
                    key: key.clone(),
                    oracle: oracle.to_string(),
                    labels: spec.labels().to_vec(),
                    target: spec.target().to_string(),
                    distribution: distribution.clone(),
                    timestamp: SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_secs())
                        .unwrap_or(0),
                };
                let json = serde_json::to_vec(&record).expect("call record serializes");
                let io = |source| CacheError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                };
                writeln!(w, "{}", json.len()).map_err(io)?;
                w.write_all(&json).map_err(io)?;
                w.write_all(b"\n").map_err(io)?;
                w.flush().map_err(io)?;
            }
        }
        self.index.write().unwrap().insert(key, distribution.clone());
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.index.read().unwrap().len() as u64,
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// All records currently in the file.
    pub fn records(&self) -> Result<Vec<CallRecord>, CacheError> {
        match &self.path {
            None => Ok(Vec::new()),
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|source| CacheError::Io {
                    path: path.clone(),
                    source,
                })?;
                parse_records(path, &bytes)
            }
        }
    }
}

/// Returns the stored distribution on a hit; otherwise calls the oracle and persists the result.
pub fn cached_evaluate(
    cache: &ResponseCache,
    oracle: &dyn Oracle,
    query: &Query<'_>,
    spec: &ChoiceSpec,
) -> Result<ChoiceDistribution, OracleError> {
    let identity = oracle.identity();
    let key = cache_key(query.prompt, spec, &identity);
    cached_evaluate_keyed(cache, oracle, &identity, key, query, spec)
}

/// [`cached_evaluate`] with the oracle identity and key already computed.
pub fn cached_evaluate_keyed(
    cache: &ResponseCache,
    oracle: &dyn Oracle,
    identity: &str,
    key: String,
    query: &Query<'_>,
    spec: &ChoiceSpec,
) -> Result<ChoiceDistribution, OracleError> {
    if let Some(hit) = cache.get(&key) {
        cache.hits.fetch_add(1, Ordering::Relaxed);
        return Ok(hit);
    }
    cache.misses.fetch_add(1, Ordering::Relaxed);
    let dist = oracle.evaluate(query, spec)?;
    cache.insert(key, identity, spec, &dist)?;
    Ok(dist)
}
