//! The four inference strategies and the premise-consistency check.
//!
//! Every step of DRCR and TRCR runs in a fresh conversation. The contrast
//! step receives earlier records as quoted text, never as prior turns, so no
//! premise conversation can see another's response.

mod runner;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::domain::{negate_premise, sample_hypothesis, Polarity, Premise, SentenceInstance};
use crate::parser::{extract_polarity, resolve_after_retry, resolve_unparseable, Resolution, RuleId, UnparseablePolicy};
use crate::prompts::{Conversation, PromptMessage, Prompter, RecordView, RenderError};

pub use runner::{
    isolation_violations, run_dataset, InstanceFailure, RunArtifact, RunError, RunManifest, TranscriptLine,
    ISOLATION_WINDOW,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Thor,
    Drcr,
    Trcr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Direct, Method::Thor, Method::Drcr, Method::Trcr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Thor => "thor",
            Method::Drcr => "drcr",
            Method::Trcr => "trcr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Direct => "Direct",
            Method::Thor => "THOR",
            Method::Drcr => "DRCR",
            Method::Trcr => "TRCR",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Method::Direct),
            "thor" => Ok(Method::Thor),
            "drcr" => Ok(Method::Drcr),
            "trcr" => Ok(Method::Trcr),
            other => Err(format!("unknown method `{other}` (expected direct, thor, drcr or trcr)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    /// `None` when the correction answer was unparseable.
    pub re_inferred: Option<Polarity>,
    pub consistent: bool,
    pub regenerated: bool,
}

/// One premise-conditioned answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningRecord {
    pub premise: Premise,
    pub aspect_answer: String,
    pub rationale: String,
    pub raw_response: String,
    pub correction: Option<Correction>,
}

impl ReasoningRecord {
    pub fn from_response(premise: Premise, raw: &str) -> Result<Self, String> {
        let (aspect_answer, rationale) = split_sub_answers(raw);
        if aspect_answer.is_empty() {
            return Err("premise response has an empty aspect answer".into());
        }
        if rationale.is_empty() {
            return Err("premise response has an empty rationale".into());
        }
        Ok(ReasoningRecord { premise, aspect_answer, rationale, raw_response: raw.to_string(), correction: None })
    }

    pub fn view(&self) -> RecordView<'_> {
        RecordView { premise: self.premise, aspect_answer: &self.aspect_answer, rationale: &self.rationale }
    }
}

/// Splits a premise answer on the `1)` / `2)` enumerators the prompt uses.
/// Without both markers the whole answer is the rationale and its first
/// sentence stands in for the aspect answer.
pub fn split_sub_answers(raw: &str) -> (String, String) {
    if let Some(one) = raw.find("1)") {
        let after_one = &raw[one + 2..];
        if let Some(two) = after_one.find("2)") {
            let aspect = after_one[..two].trim().to_string();
            let rationale = after_one[two + 2..].trim().to_string();
            return (aspect, rationale);
        }
    }
    let whole = raw.trim();
    let first = whole
        .find(['.', '!', '?', '\n'])
        .map(|i| &whole[..i])
        .unwrap_or(whole)
        .trim();
    (first.to_string(), whole.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Direct,
    Hop,
    Premise,
    Correction,
    Regenerate,
    Contrast,
    Clarify,
}

/// One request/response exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: u8,
    pub stage: Stage,
    pub messages: Conversation,
    pub response: String,
    pub prompt_hash: String,
    pub rule_fired: Option<RuleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub method: Method,
    pub seed: u64,
    pub records: Vec<ReasoningRecord>,
    /// THOR answers, one per hop.
    pub hop_answers: Vec<String>,
    pub contrast_raw: Option<String>,
    /// `None` only under the count-wrong policy.
    pub final_polarity: Option<Polarity>,
    pub fallback_used: bool,
    pub rule_fired: RuleId,
    #[serde(skip)]
    pub transcripts: Vec<TranscriptEntry>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    pub enabled: bool,
    pub regenerate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub policy: UnparseablePolicy,
    pub correction: CorrectionConfig,
    /// Use this DRCR hypothesis instead of sampling one.
    pub fixed_premise: Option<Polarity>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("instance `{instance_id}` ({method}) failed at step {step}: {source}")]
pub struct PipelineError {
    pub instance_id: String,
    pub method: Method,
    pub step: u8,
    pub source: StepFailure,
}

/// Runs strategies for single instances against a shared backend.
pub struct Pipeline<'a> {
    backend: &'a dyn Backend,
    prompter: &'a Prompter,
    cfg: PipelineConfig,
}

struct Trace<'x> {
    x: &'x SentenceInstance,
    method: Method,
    entries: Vec<TranscriptEntry>,
}

impl Trace<'_> {
    fn fail(&self, step: u8, source: impl Into<StepFailure>) -> PipelineError {
        PipelineError { instance_id: self.x.id.clone(), method: self.method, step, source: source.into() }
    }
}

struct Decision {
    label: Option<Polarity>,
    fallback: bool,
    rule: RuleId,
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a dyn Backend, prompter: &'a Prompter, cfg: PipelineConfig) -> Self {
        Pipeline { backend, prompter, cfg }
    }

    pub fn run(&self, method: Method, x: &SentenceInstance, seed: u64) -> Result<PredictionRecord, PipelineError> {
        match method {
            Method::Direct => self.run_direct(x),
            Method::Thor => self.run_thor(x),
            Method::Drcr => self.run_drcr(x, seed),
            Method::Trcr => self.run_trcr(x),
        }
    }

    fn ask(
        &self,
        trace: &mut Trace<'_>,
        step: u8,
        stage: Stage,
        conv: Conversation,
        rule: bool,
    ) -> Result<String, PipelineError> {
        let completion = self.backend.complete(&conv).map_err(|e| trace.fail(step, e))?;
        let rule_fired = rule.then(|| extract_polarity(&completion.text).rule_fired);
        trace.entries.push(TranscriptEntry {
            step,
            stage,
            messages: conv,
            response: completion.text.clone(),
            prompt_hash: completion.prompt_hash,
            rule_fired,
        });
        Ok(completion.text)
    }

    /// Reads a label from `response`, applying the unparseable policy. The
    /// retry policy re-asks once in the same conversation.
    fn decide(
        &self,
        trace: &mut Trace<'_>,
        step: u8,
        conv: &Conversation,
        response: &str,
    ) -> Result<Decision, PipelineError> {
        let outcome = extract_polarity(response);
        let fallback = !outcome.is_parsed();
        match resolve_unparseable(&outcome, self.cfg.policy) {
            Resolution::Label(p) => Ok(Decision { label: Some(p), fallback, rule: outcome.rule_fired }),
            Resolution::CountWrong => Ok(Decision { label: None, fallback, rule: outcome.rule_fired }),
            Resolution::Retry => {
                let clarify = self.prompter.render_clarification_turn().map_err(|e| trace.fail(step, e))?;
                let follow = conv
                    .clone()
                    .with(PromptMessage::assistant(response))
                    .with(PromptMessage::user(clarify));
                let second = self.ask(trace, step, Stage::Clarify, follow, true)?;
                let again = extract_polarity(&second);
                Ok(Decision { label: Some(resolve_after_retry(&again)), fallback, rule: again.rule_fired })
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        trace: Trace<'_>,
        seed: u64,
        records: Vec<ReasoningRecord>,
        hop_answers: Vec<String>,
        contrast_raw: Option<String>,
        decision: Decision,
        started: Instant,
    ) -> PredictionRecord {
        PredictionRecord {
            instance_id: trace.x.id.clone(),
            method: trace.method,
            seed,
            records,
            hop_answers,
            contrast_raw,
            final_polarity: decision.label,
            fallback_used: decision.fallback,
            rule_fired: decision.rule,
            transcripts: trace.entries,
            wall_time: started.elapsed(),
        }
    }

    pub fn run_direct(&self, x: &SentenceInstance) -> Result<PredictionRecord, PipelineError> {
        let started = Instant::now();
        let mut trace = Trace { x, method: Method::Direct, entries: Vec::new() };
        let conv = self.prompter.render_direct_prompt(x).map_err(|e| trace.fail(1, e))?;
        let answer = self.ask(&mut trace, 1, Stage::Direct, conv.clone(), true)?;
        let decision = self.decide(&mut trace, 1, &conv, &answer)?;
        Ok(self.finish(trace, 0, Vec::new(), Vec::new(), None, decision, started))
    }

    pub fn run_thor(&self, x: &SentenceInstance) -> Result<PredictionRecord, PipelineError> {
        let started = Instant::now();
        let mut trace = Trace { x, method: Method::Thor, entries: Vec::new() };
        let mut answers: Vec<String> = Vec::with_capacity(3);
        let mut last_conv = Conversation::default();
        for hop in 1..=3u8 {
            let conv = self.prompter.render_thor_hop(x, hop, &answers).map_err(|e| trace.fail(hop, e))?;
            let answer = self.ask(&mut trace, hop, Stage::Hop, conv.clone(), hop == 3)?;
            answers.push(answer);
            last_conv = conv;
        }
        let decision = self.decide(&mut trace, 3, &last_conv, &answers[2])?;
        Ok(self.finish(trace, 0, Vec::new(), answers, None, decision, started))
    }

    fn premise_step(
        &self,
        trace: &mut Trace<'_>,
        step: u8,
        premise: Premise,
        isolate: bool,
    ) -> Result<ReasoningRecord, PipelineError> {
        let conv = self
            .prompter
            .render_premise_prompt(trace.x, premise, isolate)
            .map_err(|e| trace.fail(step, e))?;
        let raw = self.ask(trace, step, Stage::Premise, conv.clone(), false)?;
        let record =
            ReasoningRecord::from_response(premise, &raw).map_err(|m| trace.fail(step, StepFailure::InvalidRecord(m)))?;
        if self.cfg.correction.enabled {
            self.correction_step(trace, step, record, conv)
        } else {
            Ok(record)
        }
    }

    fn correction_step(
        &self,
        trace: &mut Trace<'_>,
        step: u8,
        record: ReasoningRecord,
        premise_conv: Conversation,
    ) -> Result<ReasoningRecord, PipelineError> {
        let conv = self
            .prompter
            .render_correction_prompt(record.view())
            .map_err(|e| trace.fail(step, e))?;
        let answer = self.ask(trace, step, Stage::Correction, conv, true)?;
        let re_inferred = extract_polarity(&answer).polarity;
        let consistent = re_inferred.is_some_and(|p| record.premise.matches(p));

        // An unparseable check is recorded but never triggers regeneration.
        if !consistent && re_inferred.is_some() && self.cfg.correction.regenerate {
            let turn = self
                .prompter
                .render_regenerate_turn(trace.x, record.premise)
                .map_err(|e| trace.fail(step, e))?;
            let conv = premise_conv
                .with(PromptMessage::assistant(record.raw_response.clone()))
                .with(PromptMessage::user(turn));
            let raw = self.ask(trace, step, Stage::Regenerate, conv, false)?;
            let mut regenerated = ReasoningRecord::from_response(record.premise, &raw)
                .map_err(|m| trace.fail(step, StepFailure::InvalidRecord(m)))?;
            regenerated.correction = Some(Correction { re_inferred, consistent, regenerated: true });
            return Ok(regenerated);
        }
        Ok(ReasoningRecord { correction: Some(Correction { re_inferred, consistent, regenerated: false }), ..record })
    }

    /// Re-infers the polarity of a finished record and compares it with the
    /// record's premise. With regeneration enabled, an inconsistent record is
    /// answered once more and the new answer replaces it. `isolate` must
    /// match how the record's premise prompt was rendered.
    pub fn run_correction_check(
        &self,
        x: &SentenceInstance,
        record: ReasoningRecord,
        isolate: bool,
    ) -> Result<(ReasoningRecord, Vec<TranscriptEntry>), PipelineError> {
        let mut trace = Trace { x, method: Method::Drcr, entries: Vec::new() };
        let premise_conv = self
            .prompter
            .render_premise_prompt(x, record.premise, isolate)
            .map_err(|e| trace.fail(1, e))?;
        let out = self.correction_step(&mut trace, 1, record, premise_conv)?;
        Ok((out, trace.entries))
    }

    fn contrast_step(
        &self,
        trace: &mut Trace<'_>,
        step: u8,
        records: &[ReasoningRecord],
    ) -> Result<(String, Decision), PipelineError> {
        let views: Vec<RecordView<'_>> = records.iter().map(ReasoningRecord::view).collect();
        let conv = self
            .prompter
            .render_contrast_prompt(trace.x, &views)
            .map_err(|e| trace.fail(step, e))?;
        let answer = self.ask(trace, step, Stage::Contrast, conv.clone(), true)?;
        let decision = self.decide(trace, step, &conv, &answer)?;
        Ok((answer, decision))
    }

    pub fn run_drcr(&self, x: &SentenceInstance, seed: u64) -> Result<PredictionRecord, PipelineError> {
        let started = Instant::now();
        let mut trace = Trace { x, method: Method::Drcr, entries: Vec::new() };
        let hypothesis = match self.cfg.fixed_premise {
            Some(p) => Premise::assert(p),
            None => sample_hypothesis(seed, &x.id),
        };
        let negated = negate_premise(hypothesis).expect("sampled hypotheses are assertions");

        let first = self.premise_step(&mut trace, 1, hypothesis, false)?;
        let second = self.premise_step(&mut trace, 2, negated, true)?;
        let records = vec![first, second];
        let (contrast, decision) = self.contrast_step(&mut trace, 3, &records)?;
        Ok(self.finish(trace, seed, records, Vec::new(), Some(contrast), decision, started))
    }

    pub fn run_trcr(&self, x: &SentenceInstance) -> Result<PredictionRecord, PipelineError> {
        let started = Instant::now();
        let mut trace = Trace { x, method: Method::Trcr, entries: Vec::new() };
        let mut records = Vec::with_capacity(3);
        for (i, polarity) in Polarity::ALL.into_iter().enumerate() {
            let step = i as u8 + 1;
            records.push(self.premise_step(&mut trace, step, Premise::assert(polarity), step > 1)?);
        }
        let (contrast, decision) = self.contrast_step(&mut trace, 4, &records)?;
        Ok(self.finish(trace, 0, records, Vec::new(), Some(contrast), decision, started))
    }
}
