//! On-disk response cache: one JSON file per key, written via temp file and
//! atomic rename so concurrent writers never observe partial entries.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{canonical_serialize, prompt_hash, Backend, BackendError, Completion};
use crate::prompts::Conversation;

/// SHA-256 over `model_id \n temperature \n canonical conversation`.
pub fn cache_key(model_id: &str, temperature: f64, conv: &Conversation) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update(b"\n");
    h.update(format!("{temperature:?}").as_bytes());
    h.update(b"\n");
    h.update(canonical_serialize(conv));
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    text: String,
    /// SHA-256 hex of `text`.
    checksum: String,
}

fn checksum(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Cache { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    /// Returns the stored text, or `None` on a miss. Entries that fail to
    /// parse or whose checksum does not match are reported and treated as
    /// misses.
    pub fn get(&self, key: &str) -> std::io::Result<Option<String>> {
        let bytes = match std::fs::read(self.path_for(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.key == key && entry.checksum == checksum(&entry.text) => Ok(Some(entry.text)),
            Ok(_) => {
                warn!("cache entry {key} failed checksum; treating as miss");
                Ok(None)
            }
            Err(e) => {
                warn!("cache entry {key} unreadable ({e}); treating as miss");
                Ok(None)
            }
        }
    }

    pub fn put(&self, key: &str, text: &str) -> std::io::Result<()> {
        let entry = Entry { key: key.to_string(), text: text.to_string(), checksum: checksum(text) };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer(&mut tmp, &entry)?;
        tmp.flush()?;
        tmp.persist(self.path_for(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Serves completions from a [`Cache`], delegating misses to `inner`.
pub struct CachedBackend<B> {
    inner: B,
    cache: Cache,
    hits: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: Cache) -> Self {
        CachedBackend { inner, cache, hits: AtomicUsize::new(0) }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn cached_complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        if conv.is_empty() {
            return Err(BackendError::EmptyConversation);
        }
        let start = std::time::Instant::now();
        let key = cache_key(self.inner.model_id(), self.inner.temperature(), conv);
        if let Some(text) = self.cache.get(&key).map_err(|e| BackendError::Cache(e.to_string()))? {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Completion {
                text,
                prompt_hash: prompt_hash(conv),
                cached: true,
                latency: start.elapsed(),
                attempt_count: 0,
            });
        }
        let completion = self.inner.complete(conv)?;
        self.cache
            .put(&key, &completion.text)
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        Ok(completion)
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        self.cached_complete(conv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::prompts::PromptMessage;

    fn conv(s: &str) -> Conversation {
        Conversation(vec![PromptMessage::user(s)])
    }

    #[test]
    fn second_call_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let c = conv("q");
        let be = CachedBackend::new(ScriptedBackend::from_pairs("m", [(&c, "neutral")]), Cache::open(dir.path()).unwrap());
        let first = be.complete(&c).unwrap();
        assert!(!first.cached);
        let second = be.complete(&c).unwrap();
        assert!(second.cached);
        assert_eq!(second.text, "neutral");
        assert_eq!(be.inner().calls(), 1);
        assert_eq!(be.hits(), 1);
    }

    #[test]
    fn key_includes_model_and_temperature() {
        let c = conv("q");
        assert_ne!(cache_key("a", 0.0, &c), cache_key("b", 0.0, &c));
        assert_ne!(cache_key("a", 0.0, &c), cache_key("a", 0.7, &c));
        assert_eq!(cache_key("a", 0.0, &c), cache_key("a", 0.0, &c));

        let dir = tempfile::tempdir().unwrap();
        let cache_a = Cache::open(dir.path()).unwrap();
        let a = CachedBackend::new(ScriptedBackend::from_pairs("model-a", [(&c, "x")]), cache_a);
        a.complete(&c).unwrap();
        let b = CachedBackend::new(ScriptedBackend::from_pairs("model-b", [(&c, "y")]), Cache::open(dir.path()).unwrap());
        let out = b.complete(&c).unwrap();
        assert!(!out.cached);
        assert_eq!(out.text, "y");
    }

    #[test]
    fn corrupted_entry_is_a_miss_and_gets_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let c = conv("q");
        let key = cache_key("m", 0.0, &c);
        let path = dir.path().join(&key);
        let bad = serde_json::json!({"key": key, "text": "tampered", "checksum": "0".repeat(64)});
        std::fs::write(&path, bad.to_string()).unwrap();

        let be = CachedBackend::new(ScriptedBackend::from_pairs("m", [(&c, "fresh")]), Cache::open(dir.path()).unwrap());
        let out = be.complete(&c).unwrap();
        assert!(!out.cached);
        assert_eq!(out.text, "fresh");
        assert_eq!(be.inner().calls(), 1);

        let stored: Entry = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(stored.text, "fresh");
        assert_eq!(stored.checksum, checksum("fresh"));
        assert!(be.complete(&c).unwrap().cached);

        std::fs::write(&path, b"{not json").unwrap();
        assert!(!be.complete(&c).unwrap().cached);
    }

    #[test]
    fn concurrent_writers_leave_valid_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        std::thread::scope(|s| {
            for t in 0..8 {
                let cache = &cache;
                s.spawn(move || {
                    for _ in 0..20 {
                        cache.put("shared", &format!("writer-{t}")).unwrap();
                    }
                });
            }
        });
        let text = cache.get("shared").unwrap().unwrap();
        assert!(text.starts_with("writer-"));
    }
}
