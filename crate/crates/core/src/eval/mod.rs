//! Confusion matrices, F1 on the ALL/ISA/ESA slices, and improvement deltas.

mod reference;
mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::sha256_hex;
use crate::domain::{DomainTag, Polarity, SentenceInstance};
use crate::pipelines::{Method, RunArtifact};

pub use reference::{reference_row, reference_score, reference_table, Benchmark, ReferenceRow, Setting};
pub use report::{render_cross_table, CrossReport, ReportError, Scores};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("prediction for unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("more than one prediction for instance `{0}`")]
    DuplicatePrediction(String),
}

/// Rows are gold labels, columns predictions, both in
/// [`Polarity::ALL`] order. Predictions that never resolved to a label are
/// counted per gold class in `invalid`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
    pub invalid: [u64; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (Polarity, Option<Polarity>)>,
    {
        let mut cm = ConfusionMatrix::default();
        for (gold, pred) in pairs {
            cm.add(gold, pred);
        }
        cm
    }

    pub fn add(&mut self, gold: Polarity, pred: Option<Polarity>) {
        match pred {
            Some(p) => self.counts[gold.index()][p.index()] += 1,
            None => self.invalid[gold.index()] += 1,
        }
    }

    pub fn get(&self, gold: Polarity, pred: Polarity) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.invalid.iter().sum::<u64>()
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let mut out = *self;
        for g in 0..3 {
            for p in 0..3 {
                out.counts[g][p] += other.counts[g][p];
            }
            out.invalid[g] += other.invalid[g];
        }
        out
    }

    fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    fn fp(&self, c: usize) -> u64 {
        (0..3).filter(|&g| g != c).map(|g| self.counts[g][c]).sum()
    }

    fn fn_(&self, c: usize) -> u64 {
        (0..3).filter(|&p| p != c).map(|p| self.counts[c][p]).sum::<u64>() + self.invalid[c]
    }

    fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum::<u64>() + self.invalid[c]
    }

    /// Whether the class occurs among gold labels or predictions.
    fn present(&self, c: usize) -> bool {
        self.support(c) > 0 || self.fp(c) > 0
    }

    /// F1 of one class; 0 when precision or recall is undefined or zero.
    pub fn class_f1(&self, class: Polarity) -> f64 {
        let c = class.index();
        let tp = self.tp(c) as f64;
        let pred = (self.tp(c) + self.fp(c)) as f64;
        let gold = (self.tp(c) + self.fn_(c)) as f64;
        if tp == 0.0 || pred == 0.0 || gold == 0.0 {
            return 0.0;
        }
        let p = tp / pred;
        let r = tp / gold;
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    /// Unweighted mean over classes present in gold or predictions.
    #[default]
    Macro,
    /// Pooled counts over all classes.
    Micro,
    /// Class F1 weighted by gold support.
    Weighted,
}

impl fmt::Display for F1Average {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            F1Average::Macro => "macro",
            F1Average::Micro => "micro",
            F1Average::Weighted => "weighted",
        })
    }
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    f1_score(cm, F1Average::Macro)
}

pub fn f1_score(cm: &ConfusionMatrix, average: F1Average) -> Result<f64, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    Ok(match average {
        F1Average::Macro => {
            let included: Vec<Polarity> = Polarity::ALL.into_iter().filter(|p| cm.present(p.index())).collect();
            included.iter().map(|&p| cm.class_f1(p)).sum::<f64>() / included.len() as f64
        }
        F1Average::Micro => {
            let tp: u64 = (0..3).map(|c| cm.tp(c)).sum();
            let predicted: u64 = cm.counts.iter().flatten().sum();
            if tp == 0 {
                0.0
            } else {
                let p = tp as f64 / predicted as f64;
                let r = tp as f64 / total as f64;
                2.0 * p * r / (p + r)
            }
        }
        F1Average::Weighted => Polarity::ALL
            .into_iter()
            .map(|p| cm.class_f1(p) * cm.support(p.index()) as f64)
            .sum::<f64>()
            / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slice {
    #[serde(rename = "ALL")]
    All,
    #[serde(rename = "ISA")]
    Isa,
    #[serde(rename = "ESA")]
    Esa,
}

impl Slice {
    pub const ALL: [Slice; 3] = [Slice::All, Slice::Isa, Slice::Esa];

    pub fn as_str(self) -> &'static str {
        match self {
            Slice::All => "ALL",
            Slice::Isa => "ISA",
            Slice::Esa => "ESA",
        }
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Slice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ALL" => Ok(Slice::All),
            "ISA" => Ok(Slice::Isa),
            "ESA" => Ok(Slice::Esa),
            other => Err(format!("unknown slice `{other}` (expected ALL, ISA or ESA)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    /// Absent for an empty slice.
    pub macro_f1: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub n: u64,
}

impl SliceScore {
    fn from_matrix(cm: ConfusionMatrix, average: F1Average) -> Self {
        SliceScore { macro_f1: f1_score(&cm, average).ok(), confusion: cm, n: cm.total() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub model_id: String,
    pub domain: DomainTag,
    pub average: F1Average,
    pub run_manifest_hash: String,
    pub slices: BTreeMap<Slice, SliceScore>,
}

impl EvalReport {
    pub fn score(&self, slice: Slice) -> Option<f64> {
        self.slices.get(&slice).and_then(|s| s.macro_f1)
    }
}

/// Scores `(instance_id, prediction)` pairs against `dataset`, split by the
/// implicit flag. Dataset instances without a pair are not scored.
pub fn slice_matrices<'a, I>(
    pairs: I,
    dataset: &[SentenceInstance],
) -> Result<(ConfusionMatrix, ConfusionMatrix), EvalError>
where
    I: IntoIterator<Item = (&'a str, Option<Polarity>)>,
{
    let by_id: HashMap<&str, &SentenceInstance> = dataset.iter().map(|x| (x.id.as_str(), x)).collect();
    let mut seen = HashSet::new();
    let (mut isa, mut esa) = (ConfusionMatrix::default(), ConfusionMatrix::default());
    for (id, pred) in pairs {
        let x = by_id.get(id).ok_or_else(|| EvalError::UnknownInstance(id.to_string()))?;
        if !seen.insert(id) {
            return Err(EvalError::DuplicatePrediction(id.to_string()));
        }
        if x.implicit {
            isa.add(x.gold_polarity, pred);
        } else {
            esa.add(x.gold_polarity, pred);
        }
    }
    Ok((isa, esa))
}

/// Slice report for a finished run. Instances the run recorded as failed
/// are scored as unanswered.
pub fn slice_report(run: &RunArtifact, dataset: &[SentenceInstance], average: F1Average) -> Result<EvalReport, EvalError> {
    let pairs = run
        .predictions
        .iter()
        .map(|p| (p.instance_id.as_str(), p.final_polarity))
        .chain(run.failures.iter().map(|f| (f.instance_id.as_str(), None)));
    let (isa, esa) = slice_matrices(pairs, dataset)?;
    let mut slices = BTreeMap::new();
    slices.insert(Slice::All, SliceScore::from_matrix(isa.merge(&esa), average));
    slices.insert(Slice::Isa, SliceScore::from_matrix(isa, average));
    slices.insert(Slice::Esa, SliceScore::from_matrix(esa, average));
    let manifest_json = serde_json::to_string_pretty(&run.manifest).expect("manifest serializes") + "\n";
    Ok(EvalReport {
        method: run.manifest.method,
        model_id: run.manifest.model_id.clone(),
        domain: dominant_domain(dataset),
        average,
        run_manifest_hash: sha256_hex(manifest_json.as_bytes()),
        slices,
    })
}

fn dominant_domain(dataset: &[SentenceInstance]) -> DomainTag {
    match dataset.first() {
        Some(first) if dataset.iter().all(|x| x.domain_tag == first.domain_tag) => first.domain_tag,
        _ => DomainTag::Other,
    }
}

/// Rounds half away from zero to two decimals. The small bias absorbs
/// binary representation error in values such as 3.585.
pub fn round2(x: f64) -> f64 {
    let scaled = x.abs() * 100.0 + 0.5 + 1e-9;
    x.signum() * scaled.floor() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub raw: f64,
    pub rounded: f64,
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.rounded)
    }
}

/// Mean per-dataset gain of `a` over `b`, each given as
/// `(laptop, restaurant)` scores for the same slice.
pub fn improvement_delta(a: (f64, f64), b: (f64, f64)) -> Delta {
    let raw = ((a.0 - b.0) + (a.1 - b.1)) / 2.0;
    let rounded = round2(raw);
    Delta { raw, rounded: if rounded == 0.0 { 0.0 } else { rounded } }
}
