//! Label space, polarity premises and the seeded hypothesis sampler.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("premise is already negated: double negation is undefined")]
    DoubleNegation,
    #[error("unknown polarity label `{0}`")]
    UnknownPolarity(String),
    #[error("instance `{0}` has empty text")]
    EmptyText(String),
    #[error("instance id must not be empty")]
    EmptyId,
}

/// Three-way sentiment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    /// Fixed label order used for matrices, sampling and enumeration.
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Polarity> {
        Self::ALL.get(i).copied()
    }

    /// The two labels other than `self`, in label order.
    pub fn complement(self) -> [Polarity; 2] {
        let mut out = [Polarity::Positive; 2];
        let mut k = 0;
        for p in Self::ALL {
            if p != self {
                out[k] = p;
                k += 1;
            }
        }
        out
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            _ => Err(DomainError::UnknownPolarity(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PremiseKind {
    Assert,
    Negate,
}

/// An assumed polarity injected into a reasoning prompt.
///
/// `Negate(p)` stands for the two-element complement of `p`, so
/// `Negate(Positive)` covers both negative and neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Premise {
    pub kind: PremiseKind,
    pub polarity: Polarity,
}

impl Premise {
    pub fn assert(polarity: Polarity) -> Self {
        Premise { kind: PremiseKind::Assert, polarity }
    }

    pub fn negate(polarity: Polarity) -> Self {
        Premise { kind: PremiseKind::Negate, polarity }
    }

    /// Whether `y` belongs to the label set this premise denotes.
    pub fn matches(&self, y: Polarity) -> bool {
        match self.kind {
            PremiseKind::Assert => y == self.polarity,
            PremiseKind::Negate => y != self.polarity,
        }
    }
}

impl fmt::Display for Premise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PremiseKind::Assert => write!(f, "{}", self.polarity),
            PremiseKind::Negate => write!(f, "non-{}", self.polarity),
        }
    }
}

pub fn negate_premise(p: Premise) -> Result<Premise, DomainError> {
    match p.kind {
        PremiseKind::Assert => Ok(Premise::negate(p.polarity)),
        PremiseKind::Negate => Err(DomainError::DoubleNegation),
    }
}

pub fn premise_matches(p: Premise, y: Polarity) -> bool {
    p.matches(y)
}

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// One splitmix64 output for state `x` (increment, then finalize).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws the initial DRCR hypothesis for one instance.
///
/// Pure in `(seed, instance_id)`; each label has probability 1/3 up to the
/// negligible modulo bias of `u64 % 3`.
pub fn sample_hypothesis(seed: u64, instance_id: &str) -> Premise {
    let h = splitmix64(seed ^ fnv1a64(instance_id.as_bytes()));
    Premise::assert(Polarity::ALL[(h % 3) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainTag {
    Laptop,
    Restaurant,
    Other,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Laptop => "Laptop",
            DomainTag::Restaurant => "Restaurant",
            DomainTag::Other => "Other",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One aspect-labelled sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceInstance {
    pub id: String,
    pub text: String,
    pub aspect_term: Option<String>,
    pub gold_polarity: Polarity,
    pub implicit: bool,
    pub domain_tag: DomainTag,
    pub split: Split,
}

impl SentenceInstance {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        aspect_term: Option<String>,
        gold_polarity: Polarity,
        implicit: bool,
        domain_tag: DomainTag,
        split: Split,
    ) -> Result<Self, DomainError> {
        let inst = SentenceInstance {
            id: id.into(),
            text: text.into(),
            aspect_term,
            gold_polarity,
            implicit,
            domain_tag,
            split,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.is_empty() {
            return Err(DomainError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(DomainError::EmptyText(self.id.clone()));
        }
        Ok(())
    }
}
