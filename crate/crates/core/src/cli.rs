//! Command-line entry point: `ingest`, `run`, `eval`, `report`, `delta`
//! and `reference`.
//!
//! Exit codes: 0 success, 1 usage error, 2 execution error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::backend::{build_backend, BackendKind};
use crate::config::RunConfig;
use crate::dataset::{ingest, load_dataset};
use crate::domain::{DomainTag, Split};
use crate::eval::{render_cross_table, slice_report, CrossReport, EvalReport, F1Average, Setting, Slice};
use crate::pipelines::{Method, RunArtifact, RunError};
use crate::prompts::{PromptTemplateSet, Prompter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "revchain", version, about = "Premise-contrast sentiment reasoning with LLMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a SemEval-2014 XML file, optionally merging implicit labels.
    Ingest(IngestArgs),
    /// Run one method over a dataset and write a run artifact.
    Run(RunArgs),
    /// Score a run artifact against its dataset (writes report.json).
    Eval(EvalArgs),
    /// Tabulate evaluated runs, optionally beside published scores.
    Report(ReportArgs),
    /// Mean two-benchmark improvement of report A over report B.
    Delta(DeltaArgs),
    /// Emit a published score row as a report file for `delta`.
    Reference(ReferenceArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub xml: PathBuf,
    /// JSON Lines of {sentence_id, aspect_term, occurrence, implicit}.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "laptop")]
    pub domain: DomainArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DomainArg {
    Laptop,
    Restaurant,
    Other,
}

impl From<DomainArg> for DomainTag {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Laptop => DomainTag::Laptop,
            DomainArg::Restaurant => DomainTag::Restaurant,
            DomainArg::Other => DomainTag::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Direct,
    Thor,
    Drcr,
    Trcr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Direct => Method::Direct,
            MethodArg::Thor => Method::Thor,
            MethodArg::Drcr => Method::Drcr,
            MethodArg::Trcr => Method::Trcr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrectionArg {
    Off,
    Check,
    Regenerate,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Scripted response file; selects the scripted backend.
    #[arg(long)]
    pub scripted: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub correction: Option<CorrectionArg>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "macro")]
    pub average: AverageArg,
    /// Defaults to report.json inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AverageArg {
    Macro,
    Micro,
    Weighted,
}

impl From<AverageArg> for F1Average {
    fn from(a: AverageArg) -> Self {
        match a {
            AverageArg::Macro => F1Average::Macro,
            AverageArg::Micro => F1Average::Micro,
            AverageArg::Weighted => F1Average::Weighted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    ZeroShot,
    FineTuned,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::ZeroShot => Setting::ZeroShot,
            SettingArg::FineTuned => Setting::FineTuned,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluated run directories (each holding report.json).
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Show published scores beside live ones.
    #[arg(long = "paper-ref", value_name = "SETTING", value_enum, num_args = 0..=1, default_missing_value = "zero-shot")]
    pub published: Option<SettingArg>,
    /// Print the rows as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DeltaArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "ISA")]
    pub slice: Slice,
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    #[arg(long, value_enum, default_value = "zero-shot")]
    pub setting: SettingArg,
    #[arg(long)]
    pub model: String,
    /// Omit for the BERT baselines.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a subcommand, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("[{module}] {message}")]
    Module { module: &'static str, message: String },
}

fn fail(module: &'static str, e: impl std::fmt::Display) -> CliError {
    CliError::Module { module, message: e.to_string() }
}

/// Parses `argv` and runs the subcommand, writing to `out` and `err`.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Report(a) => cmd_report(a, out),
        Command::Delta(a) => cmd_delta(a, out),
        Command::Reference(a) => cmd_reference(a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| fail("cli", e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| fail("cli", format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, json).map_err(|e| fail("cli", format!("{}: {e}", path.display())))
}

fn cmd_ingest(a: IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let outcome = ingest(&a.xml, a.annotations.as_deref(), &a.out, a.domain.into(), a.split.into())
        .map_err(|e| fail("dataset", e))?;
    let c = &outcome.manifest.counts;
    emit(
        out,
        format!(
            "ingested {} instances ({} implicit, {} explicit; {} conflict dropped) into {}",
            c.total,
            c.implicit,
            c.explicit,
            c.dropped_conflict,
            a.out.display()
        ),
    )?;
    if !outcome.merge.unmatched.is_empty() {
        emit(out, format!("warning: {} annotations matched no instance", outcome.merge.unmatched.len()))?;
    }
    Ok(())
}

/// Loads the config and applies command-line overrides, returning the
/// `flag=value` list for the manifest.
pub fn resolve_run_config(a: &RunArgs) -> Result<(RunConfig, Vec<String>), CliError> {
    let mut cfg = RunConfig::load(&a.config).map_err(|e| fail("config", e))?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    let mut overrides = Vec::new();
    if let Some(m) = a.method {
        cfg.method = m.into();
        overrides.push(format!("method={}", cfg.method.as_str()));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        overrides.push(format!("seed={s}"));
    }
    if let Some(p) = a.parallelism {
        cfg.parallelism = p as usize;
        overrides.push(format!("parallelism={p}"));
    }
    if let Some(b) = a.backend {
        cfg.backend.kind = match b {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Scripted => BackendKind::Scripted,
        };
        overrides.push(format!("backend={}", if b == BackendArg::Http { "http" } else { "scripted" }));
    }
    if let Some(p) = &a.scripted {
        cfg.backend.kind = BackendKind::Scripted;
        cfg.backend.scripted_path = Some(p.clone());
        overrides.push(format!("scripted={}", p.display()));
    }
    if let Some(c) = a.correction {
        cfg.correction.enabled = c != CorrectionArg::Off;
        cfg.correction.regenerate = c == CorrectionArg::Regenerate;
        let name = match c {
            CorrectionArg::Off => "off",
            CorrectionArg::Check => "check",
            CorrectionArg::Regenerate => "regenerate",
        };
        overrides.push(format!("correction={name}"));
    }
    if let Some(d) = &a.dataset {
        cfg.dataset_path = d.clone();
        overrides.push(format!("dataset={}", d.display()));
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
        overrides.push(format!("out={}", o.display()));
    }
    cfg.validate().map_err(|e| fail("config", e))?;
    Ok((cfg, overrides))
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, overrides) = resolve_run_config(&a)?;
    let instances = load_dataset(&cfg.dataset_path).map_err(|e| fail("dataset", e))?;
    let templates = match &cfg.template_path {
        Some(p) => PromptTemplateSet::load(p).map_err(|e| fail("prompts", e))?,
        None => PromptTemplateSet::builtin(),
    };
    let prompter = Prompter::new(templates, cfg.prompt);
    let backend = build_backend(&cfg.backend).map_err(|e| fail("backend", e))?;

    let mut artifact = match crate::pipelines::run_dataset(&instances, &cfg, backend.as_ref(), &prompter) {
        Ok(a) => a,
        Err(RunError::TooManyFailures { failed, total, max_ratio, mut partial }) => {
            partial.manifest.overrides = overrides;
            partial.write(&cfg.output_dir).map_err(|e| fail("pipelines", e))?;
            let ids: Vec<String> = partial
                .failures
                .iter()
                .map(|f| format!("{} (step {}: {})", f.instance_id, f.step, f.error))
                .collect();
            return Err(fail(
                "pipelines",
                format!(
                    "{failed} of {total} instances failed (allowed ratio {max_ratio}); partial artifact in {}; failed: {}",
                    cfg.output_dir.display(),
                    ids.join(", ")
                ),
            ));
        }
        Err(e) => return Err(fail("pipelines", e)),
    };
    artifact.manifest.overrides = overrides;
    artifact.write(&cfg.output_dir).map_err(|e| fail("pipelines", e))?;
    for f in &artifact.failures {
        emit(out, format!("warning: instance {} failed at step {}: {}", f.instance_id, f.step, f.error))?;
    }
    let c = &artifact.manifest.counts;
    emit(
        out,
        format!(
            "{} run: {} predicted, {} failed, {} fallback; artifact in {}",
            cfg.method,
            c.predicted,
            c.failed,
            c.fallback_used,
            cfg.output_dir.display()
        ),
    )
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let run = RunArtifact::load(&a.run).map_err(|e| fail("pipelines", e))?;
    let dataset = load_dataset(&a.dataset).map_err(|e| fail("dataset", e))?;
    let report = slice_report(&run, &dataset, a.average.into()).map_err(|e| fail("eval", e))?;
    let path = a.out.unwrap_or_else(|| a.run.join(REPORT_FILE));
    write_json(&path, &report)?;
    for (slice, s) in &report.slices {
        let f1 = s.macro_f1.map(|v| format!("{:.2}", crate::eval::round2(v * 100.0))).unwrap_or_else(|| "n/a".into());
        emit(out, format!("{slice:<4} n={:<5} {} F1 {f1}", s.n, report.average))?;
    }
    emit(out, format!("report written to {}", path.display()))
}

fn load_eval_report(dir: &Path) -> Result<EvalReport, CliError> {
    let path = if dir.is_dir() { dir.join(REPORT_FILE) } else { dir.to_path_buf() };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| fail("eval", format!("{}: {e} (run `eval` on the run first)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| fail("eval", format!("{}: {e}", path.display())))
}

fn cmd_report(a: ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reports = a.runs.iter().map(|d| load_eval_report(d)).collect::<Result<Vec<_>, _>>()?;
    let rows = CrossReport::from_eval_reports(&reports).map_err(|e| fail("eval", e))?;
    if a.json {
        emit(out, serde_json::to_string_pretty(&rows).expect("rows serialize"))
    } else {
        emit(out, render_cross_table(&rows, a.published.map(Setting::from)).trim_end())
    }
}

fn cmd_delta(a: DeltaArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ra = CrossReport::load(&a.a).map_err(|e| fail("eval", e))?;
    let rb = CrossReport::load(&a.b).map_err(|e| fail("eval", e))?;
    let d = ra.delta(&rb, a.slice).map_err(|e| fail("eval", e))?;
    emit(out, d)
}

fn cmd_reference(a: ReferenceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = CrossReport::reference(a.setting.into(), &a.model, a.method.map(Method::from))
        .map_err(|e| fail("eval", e))?;
    match a.out {
        Some(p) => write_json(&p, &report),
        None => emit(out, serde_json::to_string_pretty(&report).expect("report serializes")),
    }
}
