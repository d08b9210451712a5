use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Oracle, OracleRequest, OracleResponse, ResponseSource};
use crate::corpus::Task;
use crate::error::{Error, Result};

/// Hex SHA-256 over the length-prefixed request identity.
pub fn cache_key(oracle_id: &str, request: &OracleRequest) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(oracle_id.as_bytes());
    field(request.task.to_string().as_bytes());
    field(request.prompt.as_bytes());
    match &request.question {
        Some(q) => {
            field(&[1]);
            field(q.as_bytes());
        }
        None => field(&[0]),
    }
    field(&(request.max_output_tokens as u64).to_le_bytes());
    hex::encode(h.finalize())
}

/// On-disk record, `{dir}/{key[..2]}/{key}.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub oracle: String,
    pub task: Task,
    pub prompt: String,
    pub question: Option<String>,
    pub max_output_tokens: usize,
    pub text: String,
    pub timestamp: u64,
}

/// Wraps an oracle with a persistent content-addressed response store.
/// Storage failures degrade to pass-through with a warning.
#[derive(Debug)]
pub struct CachedOracle<O> {
    inner: O,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl<O: Oracle> CachedOracle<O> {
    pub fn new(inner: O, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of requests delegated to the wrapped oracle.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn lookup(&self, path: &Path, oracle_id: &str, request: &OracleRequest) -> Option<String> {
        let raw = fs::read_to_string(path).ok()?;
        let entry: CacheEntry = match serde_json::from_str(&raw) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                return None;
            }
        };
        let same = entry.oracle == oracle_id
            && entry.task == request.task
            && entry.prompt == request.prompt
            && entry.question == request.question
            && entry.max_output_tokens == request.max_output_tokens;
        same.then_some(entry.text)
    }

    fn persist(&self, path: &Path, entry: &CacheEntry) -> std::io::Result<()> {
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut file = fs::File::create(&tmp)?;
        file.write_all(serde_json::to_string(entry).expect("entry serializes").as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    }
}

impl<O: Oracle> Oracle for CachedOracle<O> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate(&self, request: &OracleRequest) -> Result<OracleResponse> {
        let oracle_id = self.inner.id();
        let key = cache_key(&oracle_id, request);
        let path = self.path_for(&key);
        if let Some(text) = self.lookup(&path, &oracle_id, request) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(OracleResponse {
                text,
                source: ResponseSource::Cache,
                latency_ms: None,
                attempts: 0,
            });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.generate(request)?;
        let entry = CacheEntry {
            oracle: oracle_id,
            task: request.task,
            prompt: request.prompt.clone(),
            question: request.question.clone(),
            max_output_tokens: request.max_output_tokens,
            text: response.text.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if let Err(e) = self.persist(&path, &entry) {
            log::warn!("cache write to {} failed, continuing uncached: {e}", path.display());
        }
        Ok(response)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

fn entry_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let top = match fs::read_dir(dir) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for shard in top {
        let shard = shard.map_err(|e| Error::io(dir, e))?.path();
        if !shard.is_dir() {
            continue;
        }
        for f in fs::read_dir(&shard).map_err(|e| Error::io(&shard, e))? {
            let f = f.map_err(|e| Error::io(&shard, e))?.path();
            if f.extension().is_some_and(|x| x == "json") {
                out.push(f);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn cache_stats(dir: &Path) -> Result<CacheStats> {
    let mut stats = CacheStats::default();
    for f in entry_files(dir)? {
        stats.entries += 1;
        stats.bytes += fs::metadata(&f).map_err(|e| Error::io(&f, e))?.len();
    }
    Ok(stats)
}

/// Remove every entry; returns how many were deleted.
pub fn clear_cache(dir: &Path) -> Result<u64> {
    let files = entry_files(dir)?;
    for f in &files {
        fs::remove_file(f).map_err(|e| Error::io(f, e))?;
    }
    Ok(files.len() as u64)
}
