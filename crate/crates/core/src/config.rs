//! Declarative run configuration (JSON).
//!
//! Credentials never appear here; `backend.api_key_ref` names the
//! environment variable that holds them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::BackendConfig;
use crate::domain::Polarity;
use crate::parser::UnparseablePolicy;
use crate::pipelines::{CorrectionConfig, Method, PipelineConfig};
use crate::prompts::PromptOptions;

pub const DEFAULT_MAX_FAILURE_RATIO: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub backend: BackendConfig,
    /// Template file; built-in wording when absent.
    pub template_path: Option<PathBuf>,
    pub prompt: PromptOptions,
    pub seed: u64,
    /// DRCR: always assume this polarity first instead of sampling.
    pub fixed_premise: Option<Polarity>,
    pub parallelism: usize,
    pub correction: CorrectionConfig,
    pub parser_policy: UnparseablePolicy,
    pub fail_fast: bool,
    /// A run with a larger share of failed instances is an error.
    pub max_failure_ratio: f64,
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Drcr,
            backend: BackendConfig::default(),
            template_path: None,
            prompt: PromptOptions::default(),
            seed: 0,
            fixed_premise: None,
            parallelism: 1,
            correction: CorrectionConfig::default(),
            parser_policy: UnparseablePolicy::Retry,
            fail_fast: false,
            max_failure_ratio: DEFAULT_MAX_FAILURE_RATIO,
            dataset_path: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/out"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_ratio) {
            return Err(ConfigError::Invalid("max_failure_ratio must lie in [0, 1]".into()));
        }
        self.backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_path);
        fix(&mut self.output_dir);
        if let Some(p) = self.template_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.backend.scripted_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.backend.cache_dir.as_mut() {
            fix(p);
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            policy: self.parser_policy,
            correction: self.correction,
            fixed_premise: self.fixed_premise,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
