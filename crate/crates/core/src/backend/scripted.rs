use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Backend, BackendError, Completion};
use crate::prompts::Conversation;

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub hash: String,
    pub response: String,
}

/// Replays canned responses keyed by exact prompt hash.
#[derive(Debug)]
pub struct ScriptedBackend {
    model_id: String,
    responses: HashMap<String, String>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(model_id: impl Into<String>, entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        ScriptedBackend {
            model_id: model_id.into(),
            responses: entries.into_iter().map(|e| (e.hash, e.response)).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Builds a script directly from conversations, hashing each one.
    pub fn from_pairs<'a>(
        model_id: impl Into<String>,
        pairs: impl IntoIterator<Item = (&'a Conversation, &'a str)>,
    ) -> Self {
        let entries = pairs.into_iter().map(|(conv, resp)| ScriptEntry {
            hash: prompt_hash(conv),
            response: resp.to_string(),
        });
        Self::new(model_id, entries)
    }

    pub fn load(path: &Path, model_id: &str) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path)
            .map_err(|e| BackendError::Config(format!("opening script {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(format!("reading script {}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| {
                BackendError::Config(format!("script {} line {}: {e}", path.display(), i + 1))
            })?;
            if entry.hash.len() != 64 || !entry.hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(BackendError::Config(format!(
                    "script {} line {}: hash is not 64 hex characters",
                    path.display(),
                    i + 1
                )));
            }
            if let Some(prev) = seen.insert(entry.hash.clone(), i + 1) {
                return Err(BackendError::Config(format!(
                    "script {} line {}: hash already defined on line {prev}",
                    path.display(),
                    i + 1
                )));
            }
            entries.push(entry);
        }
        Ok(Self::new(model_id, entries))
    }

    /// Number of `complete` calls served so far, hits or misses.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        if conv.is_empty() {
            return Err(BackendError::EmptyConversation);
        }
        let start = Instant::now();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = prompt_hash(conv);
        match self.responses.get(&hash) {
            Some(text) => Ok(Completion {
                text: text.clone(),
                prompt_hash: hash,
                cached: false,
                latency: start.elapsed(),
                attempt_count: 1,
            }),
            None => Err(BackendError::MalformedResponse {
                message: format!("no scripted response for prompt hash {hash}"),
                prompt_hash: hash,
            }),
        }
    }
}
