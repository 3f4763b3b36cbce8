//! Content-addressed response cache on disk.
//!
//! Each entry lives at `<dir>/<hh>/<hash>.entry` and is laid out as
//!
//! ```text
//! magic      8 bytes   "DUETC001"
//! key       32 bytes   SHA-256 request key
//! length     8 bytes   payload length, little endian
//! payload    n bytes   JSON CompletionResult
//! checksum  32 bytes   SHA-256 over key || payload
//! ```
//!
//! Entries failing any check are treated as misses and overwritten.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::json;
use sha2::{Digest, Sha256};
use tracing::warn;

use super::view::AgentView;
use super::{BackendError, ChatBackend, CompletionResult, EndpointConfig};

const MAGIC: &[u8; 8] = b"DUETC001";

pub type CacheKey = [u8; 32];

/// Key over the endpoint identity, the full view and its generation
/// parameters. The sample index and seed only count for sampled calls.
pub fn cache_key(endpoint: &EndpointConfig, view: &AgentView) -> CacheKey {
    let mut view = view.clone();
    if view.params.temperature == 0.0 {
        view.params.sample_index = 0;
        view.params.seed = None;
    }
    let canonical = json!({
        "endpoint": {
            "name": endpoint.name,
            "base_url": endpoint.base_url,
            "model_id": endpoint.model_id,
            "supports_thinking": endpoint.supports_thinking,
            "thinking_end": endpoint.thinking_end,
        },
        "view": view,
    });
    Sha256::digest(serde_json::to_vec(&canonical).expect("key serializes")).into()
}

#[derive(Debug, PartialEq, Eq)]
pub enum CacheLookup {
    Hit(CompletionResult),
    Miss,
    Corrupt(String),
}

pub struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
    corrupt: AtomicUsize,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DiskCache {
            dir,
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
            corrupt: AtomicUsize::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let hex = hex::encode(key);
        self.dir.join(&hex[..2]).join(format!("{hex}.entry"))
    }

    /// Number of corrupt entries seen since opening.
    pub fn corrupt_entries(&self) -> usize {
        self.corrupt.load(Ordering::SeqCst)
    }

    pub fn get(&self, key: &CacheKey) -> CacheLookup {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return CacheLookup::Miss,
            Err(e) => return self.corrupt(&path, format!("unreadable: {e}")),
        };
        match decode(key, &bytes) {
            Ok(result) => CacheLookup::Hit(result),
            Err(reason) => self.corrupt(&path, reason),
        }
    }

    fn corrupt(&self, path: &Path, reason: String) -> CacheLookup {
        self.corrupt.fetch_add(1, Ordering::SeqCst);
        warn!(entry = %path.display(), %reason, "corrupt cache entry, treating as miss");
        CacheLookup::Corrupt(reason)
    }

    pub fn put(&self, key: &CacheKey, result: &CompletionResult) -> std::io::Result<()> {
        let bytes = encode(key, result);
        let path = self.entry_path(key);
        let _guard = self.write_lock.lock().unwrap();
        fs::create_dir_all(path.parent().unwrap())?;
        let tmp = path.with_extension(format!(
            "tmp.{}.{}",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::SeqCst)
        ));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &path)
    }
}

fn checksum(key: &CacheKey, payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(key);
    h.update(payload);
    h.finalize().into()
}

fn encode(key: &CacheKey, result: &CompletionResult) -> Vec<u8> {
    let payload = serde_json::to_vec(result).expect("result serializes");
    let mut out = Vec::with_capacity(8 + 32 + 8 + payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(key);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(key, &payload));
    out
}

fn decode(key: &CacheKey, bytes: &[u8]) -> Result<CompletionResult, String> {
    let header = 8 + 32 + 8;
    if bytes.len() < header + 32 {
        return Err(format!("truncated entry ({} bytes)", bytes.len()));
    }
    if &bytes[..8] != MAGIC {
        return Err("bad magic".into());
    }
    if &bytes[8..40] != key {
        return Err("key mismatch".into());
    }
    let len = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    if bytes.len() != header + len + 32 {
        return Err(format!("length mismatch: header says {len}, file has {}", bytes.len() - header - 32));
    }
    let payload = &bytes[header..header + len];
    if bytes[header + len..] != checksum(key, payload) {
        return Err("checksum mismatch".into());
    }
    serde_json::from_slice(payload).map_err(|e| format!("payload: {e}"))
}

/// Serves repeated requests from a [`DiskCache`].
pub struct CachedBackend<B> {
    inner: B,
    cache: std::sync::Arc<DiskCache>,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: std::sync::Arc<DiskCache>) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn endpoint(&self) -> &EndpointConfig {
        self.inner.endpoint()
    }

    fn complete(&self, view: &AgentView) -> Result<CompletionResult, BackendError> {
        let key = cache_key(self.inner.endpoint(), view);
        if let CacheLookup::Hit(result) = self.cache.get(&key) {
            return Ok(result);
        }
        let result = self.inner.complete(view)?;
        if let Err(e) = self.cache.put(&key, &result) {
            warn!(error = %e, "failed to write cache entry");
        }
        Ok(result)
    }
}
