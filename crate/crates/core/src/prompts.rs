//! Prompt templates and conversation rendering.
//!
//! Templates are stored in a sectioned text format:
//!
//! ```text
//! [premise]
//! Given sentence X = "{X}", assuming ...
//! [direct]
//! ...
//! ```
//!
//! Placeholders are `{NAME}` with `NAME` in `[A-Z0-9_]`. Substitution is a
//! single pass, so braces inside bound values are never re-expanded.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Premise, PremiseKind, SentenceInstance};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("template `{template}` references unbound placeholder `{{{placeholder}}}`")]
    Unbound { template: String, placeholder: String },
    #[error("template `{0}` is not defined")]
    MissingTemplate(String),
    #[error("contrast step needs 2 or 3 records, got {0}")]
    ContrastArity(usize),
    #[error("THOR hop {hop} needs {expected} prior answers, got {got}")]
    HopArity { hop: u8, expected: usize, got: usize },
    #[error("THOR hop must be 1, 2 or 3, got {0}")]
    HopIndex(u8),
    #[error("record has an empty {0}")]
    EmptyRecord(&'static str),
    #[error("rendered message is empty")]
    EmptyMessage,
}

#[derive(Debug, Error)]
pub enum TemplateLoadError {
    #[error("reading template file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: text before the first [section] header")]
    Orphan { line: usize },
    #[error("line {line}: template `{name}` defined twice")]
    Duplicate { line: usize, name: String },
    #[error("template `{0}` is empty")]
    Empty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub content: String,
}

impl PromptMessage {
    pub fn user(content: impl Into<String>) -> Self {
        PromptMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        PromptMessage { role: Role::Assistant, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        PromptMessage { role: Role::System, content: content.into() }
    }
}

/// Ordered chat messages sent to a backend as one request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Conversation(pub Vec<PromptMessage>);

impl Conversation {
    pub fn single_user(content: impl Into<String>) -> Self {
        Conversation(vec![PromptMessage::user(content)])
    }

    pub fn push(&mut self, msg: PromptMessage) {
        self.0.push(msg);
    }

    pub fn with(mut self, msg: PromptMessage) -> Self {
        self.0.push(msg);
        self
    }

    pub fn messages(&self) -> &[PromptMessage] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Concatenated user/system text, used for isolation checks.
    pub fn prompt_text(&self) -> String {
        self.0
            .iter()
            .filter(|m| m.role != Role::Assistant)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// The minimum a contrast or correction prompt needs to know about a
/// premise-conditioned answer.
#[derive(Debug, Clone, Copy)]
pub struct RecordView<'a> {
    pub premise: Premise,
    pub aspect_answer: &'a str,
    pub rationale: &'a str,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegationStyle {
    /// "non-positive"
    #[default]
    Prefixed,
    /// "negative or neutral"
    Enumerated,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub negation_style: NegationStyle,
    /// Append the gold aspect term to prompts that ask the model to find it.
    pub inject_aspect: bool,
}

pub const INDEPENDENCE_DIRECTIVE: &str =
    "Independently analyze the sentiment of this sentence, ignoring any previous responses.";

pub const CLARIFICATION: &str = "Answer with exactly one word: positive, negative, or neutral.";

pub const REQUIRED_TEMPLATES: &[&str] = &[
    "direct",
    "premise",
    "independence",
    "contrast-record",
    "contrast-2",
    "contrast-3",
    "correction",
    "regenerate",
    "clarify",
    "thor-1",
    "thor-2",
    "thor-3",
    "aspect-hint",
];

const BUILTIN_TEMPLATES: &str = r#"[direct]
Given sentence "{X}", what is its sentiment polarity?

[premise]
Given sentence X = "{X}", assuming the sentiment polarity of sentence X is {PREMISE}, answer the following questions: 1) What is the aspect entity described in sentence X? 2) What is the significance of this aspect entity in sentence X?

[independence]
Independently analyze the sentiment of this sentence, ignoring any previous responses.

[contrast-record]
Given that the sentiment polarity of X is {PREMISE}, the aspect term described is {ASPECT} and the inference is {RATIONALE}

[contrast-2]
Sentence X = "{X}".
1) {RECORD_1}
2) {RECORD_2}
Which inference is more reasonable? Please make a comprehensive judgment and determine the sentiment polarity y of sentence X.

[contrast-3]
Sentence X = "{X}".
1) {RECORD_1}
2) {RECORD_2}
3) {RECORD_3}
Among the three inferences above, which one is the most reasonable? Please make a comprehensive judgment and determine the sentiment polarity y of sentence X.

[correction]
The aspect term described is {ASPECT} and the inference is {RATIONALE}
Please evaluate the sentiment polarity based on the inferred aspect term and reasoning process.

[regenerate]
Your reasoning does not support the assumption that the sentiment polarity of sentence X is {PREMISE}. Answer both questions again under that assumption.

[clarify]
Answer with exactly one word: positive, negative, or neutral.

[thor-1]
Given sentence "{X}", identify the detailed aspects of the target that the sentence describes.

[thor-2]
Based on the aspects identified above, what implicit opinion does the sentence express toward them?

[thor-3]
Based on the aspects and the implicit opinion above, determine the sentiment polarity of the sentence toward the target.

[aspect-hint]
The aspect term under analysis is "{ASPECT}".
"#;

/// Named template strings, immutable after load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    templates: BTreeMap<String, String>,
}

impl PromptTemplateSet {
    pub fn builtin() -> Self {
        let templates = parse_sections(BUILTIN_TEMPLATES).expect("builtin templates parse");
        PromptTemplateSet { templates }
    }

    /// Parses a template file; sections it does not define keep their
    /// built-in wording.
    pub fn parse(text: &str) -> Result<Self, TemplateLoadError> {
        let mut set = Self::builtin();
        for (name, body) in parse_sections(text)? {
            set.templates.insert(name, body);
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateLoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateLoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// Serializes back into the sectioned file format, sorted by name.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, body) in &self.templates {
            out.push('[');
            out.push_str(name);
            out.push_str("]\n");
            out.push_str(body);
            out.push_str("\n\n");
        }
        out
    }

    /// SHA-256 hex of [`Self::to_text`].
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn render(&self, name: &str, bindings: &[(&str, &str)]) -> Result<String, RenderError> {
        let template = self
            .get(name)
            .ok_or_else(|| RenderError::MissingTemplate(name.to_string()))?;
        substitute(name, template, bindings)
    }
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

fn is_header(line: &str) -> Option<&str> {
    let t = line.trim_end();
    let inner = t.strip_prefix('[')?.strip_suffix(']')?;
    if !inner.is_empty()
        && inner
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        Some(inner)
    } else {
        None
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, String>, TemplateLoadError> {
    let mut out = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;

    let finish = |cur: Option<(String, Vec<&str>)>,
                      out: &mut BTreeMap<String, String>|
     -> Result<(), TemplateLoadError> {
        if let Some((name, lines)) = cur {
            let body = lines.join("\n").trim_matches('\n').trim_end().to_string();
            if body.trim().is_empty() {
                return Err(TemplateLoadError::Empty(name));
            }
            out.insert(name, body);
        }
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        if let Some(name) = is_header(line) {
            finish(current.take(), &mut out)?;
            if out.contains_key(name) {
                return Err(TemplateLoadError::Duplicate { line: i + 1, name: name.to_string() });
            }
            current = Some((name.to_string(), Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        } else if !line.trim().is_empty() {
            return Err(TemplateLoadError::Orphan { line: i + 1 });
        }
    }
    finish(current.take(), &mut out)?;
    Ok(out)
}

fn substitute(name: &str, template: &str, bindings: &[(&str, &str)]) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after
            .find(|c: char| !(c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_'))
            .unwrap_or(after.len());
        if key_len > 0 && after[key_len..].starts_with('}') {
            let key = &after[..key_len];
            let value = bindings
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| RenderError::Unbound {
                    template: name.to_string(),
                    placeholder: key.to_string(),
                })?;
            out.push_str(value);
            rest = &after[key_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders conversations for every pipeline step.
#[derive(Debug, Clone, Default)]
pub struct Prompter {
    pub templates: PromptTemplateSet,
    pub options: PromptOptions,
}

impl Prompter {
    pub fn new(templates: PromptTemplateSet, options: PromptOptions) -> Self {
        Prompter { templates, options }
    }

    /// How a premise reads inside a prompt: "positive", "non-positive" or
    /// "negative or neutral" depending on the negation style.
    pub fn premise_phrase(&self, premise: Premise) -> String {
        match (premise.kind, self.options.negation_style) {
            (PremiseKind::Assert, _) => premise.polarity.as_str().to_string(),
            (PremiseKind::Negate, NegationStyle::Prefixed) => format!("non-{}", premise.polarity),
            (PremiseKind::Negate, NegationStyle::Enumerated) => {
                let [a, b] = premise.polarity.complement();
                format!("{a} or {b}")
            }
        }
    }

    fn with_aspect_hint(&self, x: &SentenceInstance, body: String) -> Result<String, RenderError> {
        match (&x.aspect_term, self.options.inject_aspect) {
            (Some(aspect), true) => {
                let hint = self.templates.render("aspect-hint", &[("ASPECT", aspect)])?;
                Ok(format!("{body}\n{hint}"))
            }
            _ => Ok(body),
        }
    }

    pub fn render_premise_prompt(
        &self,
        x: &SentenceInstance,
        premise: Premise,
        isolate: bool,
    ) -> Result<Conversation, RenderError> {
        let phrase = self.premise_phrase(premise);
        let body = self
            .templates
            .render("premise", &[("X", &x.text), ("PREMISE", &phrase)])?;
        let body = self.with_aspect_hint(x, body)?;
        let content = if isolate {
            let directive = self.templates.render("independence", &[])?;
            format!("{directive}\n{body}")
        } else {
            body
        };
        non_empty(Conversation::single_user(content))
    }

    pub fn render_contrast_prompt(
        &self,
        x: &SentenceInstance,
        records: &[RecordView<'_>],
    ) -> Result<Conversation, RenderError> {
        let template = match records.len() {
            2 => "contrast-2",
            3 => "contrast-3",
            n => return Err(RenderError::ContrastArity(n)),
        };
        let mut rendered = Vec::with_capacity(records.len());
        let mut phrases = Vec::with_capacity(records.len());
        for r in records {
            let phrase = self.premise_phrase(r.premise);
            rendered.push(self.templates.render(
                "contrast-record",
                &[("PREMISE", &phrase), ("ASPECT", r.aspect_answer), ("RATIONALE", r.rationale)],
            )?);
            phrases.push(phrase);
        }
        const RECORD_KEYS: [&str; 3] = ["RECORD_1", "RECORD_2", "RECORD_3"];
        const POLARITY_KEYS: [&str; 3] = ["POLARITY_1", "POLARITY_2", "POLARITY_3"];
        let mut bindings: Vec<(&str, &str)> = vec![("X", &x.text)];
        for (i, (rec, phrase)) in rendered.iter().zip(&phrases).enumerate() {
            bindings.push((RECORD_KEYS[i], rec));
            bindings.push((POLARITY_KEYS[i], phrase));
        }
        let body = self.templates.render(template, &bindings)?;
        non_empty(Conversation::single_user(body))
    }

    pub fn render_correction_prompt(&self, record: RecordView<'_>) -> Result<Conversation, RenderError> {
        if record.aspect_answer.trim().is_empty() {
            return Err(RenderError::EmptyRecord("aspect answer"));
        }
        if record.rationale.trim().is_empty() {
            return Err(RenderError::EmptyRecord("rationale"));
        }
        let phrase = self.premise_phrase(record.premise);
        let body = self.templates.render(
            "correction",
            &[("ASPECT", record.aspect_answer), ("RATIONALE", record.rationale), ("PREMISE", &phrase)],
        )?;
        non_empty(Conversation::single_user(body))
    }

    /// Follow-up turn asking the model to redo a premise answer that the
    /// correction check found inconsistent.
    pub fn render_regenerate_turn(&self, x: &SentenceInstance, premise: Premise) -> Result<String, RenderError> {
        let phrase = self.premise_phrase(premise);
        self.templates
            .render("regenerate", &[("PREMISE", &phrase), ("X", &x.text)])
    }

    pub fn render_clarification_turn(&self) -> Result<String, RenderError> {
        self.templates.render("clarify", &[])
    }

    pub fn render_direct_prompt(&self, x: &SentenceInstance) -> Result<Conversation, RenderError> {
        let body = self.templates.render("direct", &[("X", &x.text)])?;
        let body = self.with_aspect_hint(x, body)?;
        non_empty(Conversation::single_user(body))
    }

    /// Builds the conversation for THOR hop `hop`; earlier hops' answers are
    /// replayed verbatim as assistant turns.
    pub fn render_thor_hop(
        &self,
        x: &SentenceInstance,
        hop: u8,
        prior_answers: &[String],
    ) -> Result<Conversation, RenderError> {
        if !(1..=3).contains(&hop) {
            return Err(RenderError::HopIndex(hop));
        }
        let expected = usize::from(hop - 1);
        if prior_answers.len() != expected {
            return Err(RenderError::HopArity { hop, expected, got: prior_answers.len() });
        }
        let mut conv = Conversation::default();
        for h in 1..=hop {
            let name = format!("thor-{h}");
            let mut body = self.templates.render(&name, &[("X", &x.text)])?;
            if h == 1 {
                body = self.with_aspect_hint(x, body)?;
            }
            conv.push(PromptMessage::user(body));
            if h < hop {
                conv.push(PromptMessage::assistant(prior_answers[usize::from(h - 1)].clone()));
            }
        }
        non_empty(conv)
    }
}

fn non_empty(conv: Conversation) -> Result<Conversation, RenderError> {
    if conv.0.iter().any(|m| m.content.trim().is_empty()) {
        return Err(RenderError::EmptyMessage);
    }
    Ok(conv)
}

impl fmt::Display for Conversation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "[{}] {}", m.role.as_str(), m.content)?;
        }
        Ok(())
    }
}
