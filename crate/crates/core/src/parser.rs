//! Reads a polarity decision out of free-form model output.
//!
//! The scan is ASCII case-insensitive over the keywords `positive`,
//! `negative` and `neutral`. A keyword whose preceding four non-whitespace
//! characters contain `non` or `not` is treated as negated and skipped
//! ("non-positive", "not positive", "non positive"). The last surviving
//! keyword wins, since chain-of-thought answers state their conclusion last.

use serde::{Deserialize, Serialize};

use crate::domain::Polarity;

const KEYWORDS: [(&str, Polarity); 3] = [
    ("positive", Polarity::Positive),
    ("negative", Polarity::Negative),
    ("neutral", Polarity::Neutral),
];

const NEGATION_WINDOW: usize = 4;

/// Which extraction rule produced an outcome. Written into transcripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleId {
    /// Last keyword occurrence, no negated occurrences seen.
    LastKeyword,
    /// Last keyword occurrence after skipping at least one negated one.
    LastKeywordSkippedNegated,
    /// Only negated keyword occurrences were found.
    OnlyNegated,
    NoKeyword,
}

/// Character offsets (not bytes) into the parsed text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    /// `None` means unparseable.
    pub polarity: Option<Polarity>,
    pub matched_span: Option<Span>,
    pub rule_fired: RuleId,
}

impl ParseOutcome {
    pub fn is_parsed(&self) -> bool {
        self.polarity.is_some()
    }
}

fn negated(prefix: &str) -> bool {
    let tail: String = {
        let mut rev: Vec<char> = prefix
            .chars()
            .rev()
            .filter(|c| !c.is_whitespace())
            .take(NEGATION_WINDOW)
            .collect();
        rev.reverse();
        rev.into_iter().collect()
    };
    let tail = tail.to_ascii_lowercase();
    tail.contains("non") || tail.contains("not")
}

pub fn extract_polarity(text: &str) -> ParseOutcome {
    // ASCII lowercasing keeps byte offsets aligned with `text`.
    let lower = text.to_ascii_lowercase();
    let mut hits: Vec<(usize, usize, Polarity)> = Vec::new();
    for (word, pol) in KEYWORDS {
        hits.extend(lower.match_indices(word).map(|(i, w)| (i, i + w.len(), pol)));
    }
    hits.sort_by_key(|h| h.0);

    let mut skipped = 0usize;
    let mut best = None;
    for &(start, end, pol) in &hits {
        if negated(&text[..start]) {
            skipped += 1;
        } else {
            best = Some((start, end, pol));
        }
    }

    match best {
        Some((start, end, pol)) => {
            let cstart = text[..start].chars().count();
            let cend = cstart + text[start..end].chars().count();
            ParseOutcome {
                polarity: Some(pol),
                matched_span: Some(Span { start: cstart, end: cend }),
                rule_fired: if skipped > 0 {
                    RuleId::LastKeywordSkippedNegated
                } else {
                    RuleId::LastKeyword
                },
            }
        }
        None => ParseOutcome {
            polarity: None,
            matched_span: None,
            rule_fired: if skipped > 0 { RuleId::OnlyNegated } else { RuleId::NoKeyword },
        },
    }
}

/// What to do when no label can be read from an answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnparseablePolicy {
    NeutralDefault,
    /// Score the instance as wrong for every gold label.
    CountWrong,
    /// Ask once more with a one-word clarification, then fall back to neutral.
    #[default]
    Retry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Label(Polarity),
    /// Polarity-absent marker; the evaluator counts it as incorrect.
    CountWrong,
    /// Re-ask once with the clarification turn appended.
    Retry,
}

pub fn resolve_unparseable(outcome: &ParseOutcome, policy: UnparseablePolicy) -> Resolution {
    match (outcome.polarity, policy) {
        (Some(p), _) => Resolution::Label(p),
        (None, UnparseablePolicy::NeutralDefault) => Resolution::Label(Polarity::Neutral),
        (None, UnparseablePolicy::CountWrong) => Resolution::CountWrong,
        (None, UnparseablePolicy::Retry) => Resolution::Retry,
    }
}

/// Second stage of the retry policy: the clarified answer or neutral.
pub fn resolve_after_retry(outcome: &ParseOutcome) -> Polarity {
    outcome.polarity.unwrap_or(Polarity::Neutral)
}
