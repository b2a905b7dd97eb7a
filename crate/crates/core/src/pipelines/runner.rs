//! Batched execution over a dataset and the on-disk run artifact.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Method, Pipeline, PipelineError, PredictionRecord, Stage, TranscriptEntry};
use crate::backend::Backend;
use crate::config::RunConfig;
use crate::dataset::dataset_hash;
use crate::domain::SentenceInstance;
use crate::prompts::Prompter;

/// Shortest response fragment that counts as leaked into another prompt.
pub const ISOLATION_WINDOW: usize = 20;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub method: Method,
    pub step: u8,
    pub error: String,
}

impl From<&PipelineError> for InstanceFailure {
    fn from(e: &PipelineError) -> Self {
        InstanceFailure { instance_id: e.instance_id.clone(), method: e.method, step: e.step, error: e.source.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub instance_id: String,
    pub method: Method,
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub instances: usize,
    pub predicted: usize,
    pub failed: usize,
    pub fallback_used: usize,
    pub regenerated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub method: Method,
    pub seed: u64,
    pub model_id: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub template_hash: String,
    pub dataset_hash: String,
    /// Command-line flags that replaced config values, as `flag=value`.
    #[serde(default)]
    pub overrides: Vec<String>,
    pub counts: RunCounts,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub manifest: RunManifest,
    /// Sorted by instance id.
    pub predictions: Vec<PredictionRecord>,
    /// Sorted by instance id.
    pub failures: Vec<InstanceFailure>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error("aborted (fail-fast): {0}")]
    Aborted(PipelineError),
    #[error("{failed} of {total} instances failed, above the allowed ratio {max_ratio}")]
    TooManyFailures { failed: usize, total: usize, max_ratio: f64, partial: Box<RunArtifact> },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs `cfg.method` over every instance with up to `cfg.parallelism`
/// instances in flight. Instance steps stay sequential.
pub fn run_dataset(
    instances: &[SentenceInstance],
    cfg: &RunConfig,
    backend: &dyn Backend,
    prompter: &Prompter,
) -> Result<RunArtifact, RunError> {
    if cfg.parallelism == 0 {
        return Err(RunError::Parallelism);
    }
    let mut seen = HashSet::new();
    for x in instances {
        if !seen.insert(x.id.as_str()) {
            return Err(RunError::DuplicateId(x.id.clone()));
        }
    }

    let started_at = now_rfc3339();
    let pipeline = Pipeline::new(backend, prompter, cfg.pipeline());
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let results: Mutex<Vec<Result<PredictionRecord, PipelineError>>> = Mutex::new(Vec::with_capacity(instances.len()));

    let workers = cfg.parallelism.min(instances.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(x) = instances.get(i) else { break };
                let out = pipeline.run(cfg.method, x, cfg.seed);
                if let Err(e) = &out {
                    log::warn!("{e}");
                    if cfg.fail_fast {
                        stop.store(true, Ordering::SeqCst);
                    }
                }
                results.lock().expect("results poisoned").push(out);
            });
        }
    });

    let mut predictions = Vec::new();
    let mut errors = Vec::new();
    for r in results.into_inner().expect("results poisoned") {
        match r {
            Ok(p) => predictions.push(p),
            Err(e) => errors.push(e),
        }
    }
    predictions.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    errors.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    if cfg.fail_fast && !errors.is_empty() {
        return Err(RunError::Aborted(errors.swap_remove(0)));
    }
    let failures: Vec<InstanceFailure> = errors.iter().map(InstanceFailure::from).collect();

    let counts = RunCounts {
        instances: instances.len(),
        predicted: predictions.len(),
        failed: failures.len(),
        fallback_used: predictions.iter().filter(|p| p.fallback_used).count(),
        regenerated: predictions
            .iter()
            .flat_map(|p| &p.records)
            .filter(|r| r.correction.is_some_and(|c| c.regenerated))
            .count(),
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        method: cfg.method,
        seed: cfg.seed,
        model_id: backend.model_id().to_string(),
        config: cfg.clone(),
        config_hash: cfg.content_hash(),
        template_hash: prompter.templates.content_hash(),
        dataset_hash: dataset_hash(instances),
        overrides: Vec::new(),
        counts,
        started_at,
        finished_at: now_rfc3339(),
    };
    let artifact = RunArtifact { manifest, predictions, failures };

    let total = instances.len();
    if total > 0 && (artifact.failures.len() as f64 / total as f64) > cfg.max_failure_ratio {
        return Err(RunError::TooManyFailures {
            failed: artifact.failures.len(),
            total,
            max_ratio: cfg.max_failure_ratio,
            partial: Box::new(artifact),
        });
    }
    Ok(artifact)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), RunError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, &row).expect("row serializes");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| RunError::Io {
                path: path.display().to_string(),
                message: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TimingLine<'a> {
    instance_id: &'a str,
    wall_time_secs: f64,
}

impl RunArtifact {
    pub fn transcript_lines(&self) -> impl Iterator<Item = TranscriptLine> + '_ {
        self.predictions.iter().map(|p| TranscriptLine {
            instance_id: p.instance_id.clone(),
            method: p.method,
            entries: p.transcripts.clone(),
        })
    }

    /// Writes the artifact directory. `predictions.jsonl`,
    /// `transcripts.jsonl` and `failures.jsonl` depend only on inputs;
    /// timestamps and wall times live in `manifest.json` and `timings.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mpath = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;
        write_jsonl(&dir.join(PREDICTIONS_FILE), &self.predictions)?;
        write_jsonl(&dir.join(TRANSCRIPTS_FILE), self.transcript_lines())?;
        write_jsonl(&dir.join(FAILURES_FILE), &self.failures)?;
        write_jsonl(
            &dir.join(TIMINGS_FILE),
            self.predictions
                .iter()
                .map(|p| TimingLine { instance_id: &p.instance_id, wall_time_secs: p.wall_time.as_secs_f64() }),
        )
    }

    /// Reads an artifact directory back; transcripts are reattached to their
    /// predictions. Wall times are not restored.
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| RunError::Io { path: mpath.display().to_string(), message: e.to_string() })?;
        let mut predictions: Vec<PredictionRecord> = read_jsonl(&dir.join(PREDICTIONS_FILE))?;
        let tpath = dir.join(TRANSCRIPTS_FILE);
        if tpath.exists() {
            let mut by_id: BTreeMap<String, Vec<TranscriptEntry>> = read_jsonl::<TranscriptLine>(&tpath)?
                .into_iter()
                .map(|t| (t.instance_id, t.entries))
                .collect();
            for p in &mut predictions {
                if let Some(entries) = by_id.remove(&p.instance_id) {
                    p.transcripts = entries;
                }
            }
        }
        let fpath = dir.join(FAILURES_FILE);
        let failures = if fpath.exists() { read_jsonl(&fpath)? } else { Vec::new() };
        Ok(RunArtifact { manifest, predictions, failures })
    }
}

/// Pairs `(from_step, into_step)` where a response of one premise
/// conversation shares a substring of [`ISOLATION_WINDOW`] characters with
/// the prompt of another. Regenerated answers belong to their step's
/// premise conversation; correction and contrast conversations are not
/// premise conversations. Empty for a correctly isolated record.
pub fn isolation_violations(p: &PredictionRecord) -> Vec<(u8, u8)> {
    let premise_like = |s: Stage| matches!(s, Stage::Premise | Stage::Regenerate);
    let mut groups: BTreeMap<u8, (Vec<&str>, String)> = BTreeMap::new();
    for e in p.transcripts.iter().filter(|e| premise_like(e.stage)) {
        let g = groups.entry(e.step).or_default();
        g.0.push(&e.response);
        g.1.push_str(&e.messages.prompt_text());
        g.1.push('\n');
    }
    let mut out = Vec::new();
    for (&from, (responses, _)) in &groups {
        for (&into, (_, prompt)) in &groups {
            if from != into && responses.iter().any(|r| shares_window(r, prompt, ISOLATION_WINDOW)) {
                out.push((from, into));
            }
        }
    }
    out
}

fn shares_window(response: &str, prompt: &str, n: usize) -> bool {
    let chars: Vec<char> = response.chars().collect();
    chars.len() >= n && chars.windows(n).any(|w| prompt.contains(&w.iter().collect::<String>()))
}
