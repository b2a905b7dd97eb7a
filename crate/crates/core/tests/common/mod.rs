#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use revchain::backend::{prompt_hash, Backend, BackendError, Completion, ScriptedBackend};
use revchain::config::RunConfig;
use revchain::dataset::load_dataset;
use revchain::domain::{Polarity, SentenceInstance};
use revchain::prompts::Conversation;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_config() -> RunConfig {
    let root = fixtures();
    let mut cfg = RunConfig::load(&root.join("run.json")).expect("fixture run config");
    cfg.resolve_paths(&root);
    cfg
}

pub fn fixture_instances() -> Vec<SentenceInstance> {
    load_dataset(&fixtures().join("dataset")).expect("fixture dataset")
}

pub fn fixture_backend(cfg: &RunConfig) -> ScriptedBackend {
    ScriptedBackend::load(cfg.backend.scripted_path.as_ref().unwrap(), &cfg.backend.model_id).expect("script")
}

/// method -> instance id -> expected final label.
pub fn expected_labels() -> BTreeMap<String, BTreeMap<String, Polarity>> {
    let text = std::fs::read_to_string(fixtures().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Backend answering through a closure; logs every conversation.
pub struct FnBackend<F> {
    f: F,
    pub log: Mutex<Vec<Conversation>>,
}

impl<F> FnBackend<F>
where
    F: Fn(&Conversation) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend { f, log: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&Conversation) -> Result<String, BackendError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        "fn-backend"
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        self.log.lock().unwrap().push(conv.clone());
        let text = (self.f)(conv)?;
        Ok(Completion { text, prompt_hash: prompt_hash(conv), cached: false, latency: Duration::ZERO, attempt_count: 1 })
    }
}

pub fn last_user(conv: &Conversation) -> &str {
    &conv.messages().last().unwrap().content
}
