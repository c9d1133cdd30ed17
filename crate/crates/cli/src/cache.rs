//! Content-addressed cache of chat responses.
//!
//! Entries live in `cache_dir/<key>.json`, where the key is the SHA-256 of
//! the canonical JSON form of the request: object keys sorted, integral
//! floats written as integers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use termweave_core::backends::{BackendError, ChatBackend, ChatRequest};

/// Canonical serialisation used for hashing.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
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
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Number(n) => out.push_str(&canonical_number(n)),
        other => out.push_str(&other.to_string()),
    }
}

fn canonical_number(n: &serde_json::Number) -> String {
    if n.is_i64() || n.is_u64() {
        return n.to_string();
    }
    let f = n.as_f64().unwrap_or(f64::NAN);
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 9.007_199_254_740_992e15 {
        format!("{}", f as i64)
    } else {
        format!("{f}")
    }
}

pub fn key_for_value(v: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(v).as_bytes()))
}

pub fn request_key(req: &ChatRequest) -> String {
    key_for_value(&serde_json::to_value(req).expect("chat requests serialize"))
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    request: Value,
    response: String,
    created_at: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub hits: usize,
    pub misses: usize,
    pub stores: usize,
    pub evictions: usize,
}

pub struct ChatCache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
    stores: AtomicUsize,
    evictions: AtomicUsize,
    tmp_counter: AtomicUsize,
}

impl ChatCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ChatCache {
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            stores: AtomicUsize::new(0),
            evictions: AtomicUsize::new(0),
            tmp_counter: AtomicUsize::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn counters(&self) -> CacheCounters {
        CacheCounters {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            stores: self.stores.load(Ordering::SeqCst),
            evictions: self.evictions.load(Ordering::SeqCst),
        }
    }

    /// Stored response for `req`; corrupt entries are evicted and count as misses.
    pub fn lookup(&self, req: &ChatRequest) -> Option<String> {
        let key = request_key(req);
        let path = self.path_for(&key);
        let found = match fs::read(&path) {
            Err(_) => None,
            Ok(bytes) => match serde_json::from_slice::<Entry>(&bytes) {
                Ok(entry) if entry.key == key => Some(entry.response),
                Ok(_) | Err(_) => {
                    log::warn!("evicting corrupt cache entry {}", path.display());
                    let _ = fs::remove_file(&path);
                    self.evictions.fetch_add(1, Ordering::SeqCst);
                    None
                }
            },
        };
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::SeqCst);
        found
    }

    pub fn store(&self, req: &ChatRequest, response: &str) -> std::io::Result<()> {
        let request = serde_json::to_value(req).expect("chat requests serialize");
        let key = key_for_value(&request);
        let entry = Entry {
            key: key.clone(),
            request,
            response: response.to_string(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let n = self.tmp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(&entry)?)?;
        f.sync_all()?;
        fs::rename(&tmp, self.path_for(&key))?;
        self.stores.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }
}

/// Chat backend that consults the cache before the wrapped backend and
/// stores every successful response.
pub struct CachingChat<'a, B> {
    cache: &'a ChatCache,
    inner: B,
}

impl<'a, B: ChatBackend> CachingChat<'a, B> {
    pub fn new(cache: &'a ChatCache, inner: B) -> Self {
        CachingChat { cache, inner }
    }
}

impl<B: ChatBackend> ChatBackend for CachingChat<'_, B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        if let Some(hit) = self.cache.lookup(req) {
            return Ok(hit);
        }
        let response = self.inner.chat(req)?;
        if let Err(e) = self.cache.store(req, &response) {
            log::warn!("cannot write cache entry: {e}");
        }
        Ok(response)
    }
}

/// Stand-in used with `--offline`: every request that reaches it fails.
pub struct NoNetworkChat;

impl ChatBackend for NoNetworkChat {
    fn chat(&self, _req: &ChatRequest) -> Result<String, BackendError> {
        Err(BackendError::reported("offline mode and no cached response", false))
    }
}
