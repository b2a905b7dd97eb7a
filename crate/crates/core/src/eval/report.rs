//! Cross-method score tables (percent) built from evaluation reports or the
//! published reference rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::reference::{reference_row, reference_table};
use super::{improvement_delta, round2, Benchmark, Delta, EvalReport, F1Average, Setting, Slice};
use crate::domain::DomainTag;
use crate::pipelines::Method;

/// Scores in percent, keyed by benchmark then slice.
pub type Scores = BTreeMap<Benchmark, BTreeMap<Slice, f64>>;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("report for {model} {method} has domain {domain:?}, which is neither laptop nor restaurant")]
    UnmappedDomain { model: String, method: Method, domain: DomainTag },
    #[error("two reports cover {model} {method} on {benchmark:?}")]
    DuplicateCell { model: String, method: Method, benchmark: Benchmark },
    #[error("report `{label}` has no {slice} score for {benchmark:?}")]
    MissingScore { label: String, benchmark: Benchmark, slice: Slice },
    #[error("no reference row for {model} {method:?}")]
    NoReference { model: String, method: Option<Method> },
}

/// One (model, method) row across both benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    pub model: String,
    pub method: Option<Method>,
    /// `run` for live scores, `reference` for published ones.
    pub source: String,
    pub setting: Option<Setting>,
    pub average: F1Average,
    pub scores: Scores,
}

impl CrossReport {
    pub fn label(&self) -> String {
        match self.method {
            Some(m) => format!("{} {m}", self.model),
            None => self.model.clone(),
        }
    }

    pub fn score(&self, benchmark: Benchmark, slice: Slice) -> Option<f64> {
        self.scores.get(&benchmark).and_then(|s| s.get(&slice)).copied()
    }

    fn pair(&self, slice: Slice) -> Result<(f64, f64), ReportError> {
        let get = |b| {
            self.score(b, slice)
                .ok_or_else(|| ReportError::MissingScore { label: self.label(), benchmark: b, slice })
        };
        Ok((get(Benchmark::Laptop)?, get(Benchmark::Restaurant)?))
    }

    /// Mean gain of `self` over `other` on `slice` across both benchmarks.
    pub fn delta(&self, other: &CrossReport, slice: Slice) -> Result<Delta, ReportError> {
        Ok(improvement_delta(self.pair(slice)?, other.pair(slice)?))
    }

    pub fn reference(setting: Setting, model: &str, method: Option<Method>) -> Result<Self, ReportError> {
        let row = reference_row(setting, model, method)
            .ok_or_else(|| ReportError::NoReference { model: model.to_string(), method })?;
        let mut scores = Scores::new();
        for b in [Benchmark::Laptop, Benchmark::Restaurant] {
            let slices = scores.entry(b).or_default();
            for s in [Slice::All, Slice::Isa] {
                slices.insert(s, row.get(b, s).expect("ALL and ISA are tabulated"));
            }
        }
        Ok(CrossReport {
            model: row.model.to_string(),
            method: row.method,
            source: "reference".into(),
            setting: Some(setting),
            average: F1Average::Macro,
            scores,
        })
    }

    /// Groups evaluation reports by (model, method); each report fills the
    /// benchmark column of its dataset's domain.
    pub fn from_eval_reports(reports: &[EvalReport]) -> Result<Vec<CrossReport>, ReportError> {
        let mut rows: BTreeMap<(String, Method), CrossReport> = BTreeMap::new();
        for r in reports {
            let benchmark = match r.domain {
                DomainTag::Laptop => Benchmark::Laptop,
                DomainTag::Restaurant => Benchmark::Restaurant,
                DomainTag::Other => {
                    return Err(ReportError::UnmappedDomain {
                        model: r.model_id.clone(),
                        method: r.method,
                        domain: r.domain,
                    })
                }
            };
            let row = rows.entry((r.model_id.clone(), r.method)).or_insert_with(|| CrossReport {
                model: r.model_id.clone(),
                method: Some(r.method),
                source: "run".into(),
                setting: None,
                average: r.average,
                scores: Scores::new(),
            });
            if row.scores.contains_key(&benchmark) {
                return Err(ReportError::DuplicateCell { model: r.model_id.clone(), method: r.method, benchmark });
            }
            let cells = row.scores.entry(benchmark).or_default();
            for slice in Slice::ALL {
                if let Some(v) = r.score(slice) {
                    cells.insert(slice, v * 100.0);
                }
            }
        }
        Ok(rows.into_values().collect())
    }

    /// Reads a report file holding one object or a one-element array.
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let err = |message: String| ReportError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let value = match value {
            serde_json::Value::Array(mut items) if items.len() == 1 => items.remove(0),
            serde_json::Value::Array(items) => {
                return Err(err(format!("expected one report, found {}", items.len())));
            }
            v => v,
        };
        serde_json::from_value(value).map_err(|e| err(e.to_string()))
    }
}

const COLUMNS: [(Benchmark, Slice); 6] = [
    (Benchmark::Laptop, Slice::All),
    (Benchmark::Laptop, Slice::Isa),
    (Benchmark::Laptop, Slice::Esa),
    (Benchmark::Restaurant, Slice::All),
    (Benchmark::Restaurant, Slice::Isa),
    (Benchmark::Restaurant, Slice::Esa),
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", round2(x))).unwrap_or_else(|| "-".into())
}

/// Aligned plain-text table: one row per report, benchmark x slice
/// columns. With a `published` setting, each live cell is followed by the published
/// value in brackets.
pub fn render_cross_table(reports: &[CrossReport], published: Option<Setting>) -> String {
    let mut header = vec!["model".to_string(), "method".to_string()];
    for (b, s) in COLUMNS {
        header.push(format!("{b:?} {s}"));
    }
    let mut rows = vec![header];
    for r in reports {
        let reference = published.and_then(|set| reference_row(set, &r.model, r.method));
        let mut line = vec![r.model.clone(), r.method.map(|m| m.to_string()).unwrap_or_else(|| "-".into())];
        for (b, s) in COLUMNS {
            let live = cell(r.score(b, s));
            line.push(match reference.and_then(|row| row.get(b, s)) {
                Some(p) if r.source != "reference" => format!("{live} [{p:.2}]"),
                _ => live,
            });
        }
        rows.push(line);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    let average = reports.first().map(|r| r.average).unwrap_or_default();
    let _ = writeln!(out, "F1: {average} average over classes present in gold or predictions, in percent.");
    if let Some(setting) = published {
        let _ = writeln!(out, "Bracketed values: published {setting} scores (reference only).");
        let baselines: Vec<_> = reference_table(setting).iter().filter(|r| r.method.is_none()).collect();
        for b in baselines {
            let _ = writeln!(
                out,
                "  baseline {:<16} laptop {:.2}/{:.2}  restaurant {:.2}/{:.2} (ALL/ISA)",
                b.model, b.laptop_all, b.laptop_isa, b.restaurant_all, b.restaurant_isa
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{ConfusionMatrix, SliceScore};

    fn eval(domain: DomainTag, isa: f64) -> EvalReport {
        let s = |v| SliceScore { macro_f1: Some(v), confusion: ConfusionMatrix::default(), n: 1 };
        EvalReport {
            method: Method::Drcr,
            model_id: "flan-t5-base".into(),
            domain,
            average: F1Average::Macro,
            run_manifest_hash: String::new(),
            slices: [(Slice::All, s(0.5)), (Slice::Isa, s(isa))].into_iter().collect(),
        }
    }

    #[test]
    fn reference_delta() {
        let a = CrossReport::reference(Setting::ZeroShot, "flan-t5-base", Some(Method::Drcr)).unwrap();
        let b = CrossReport::reference(Setting::ZeroShot, "flan-t5-base", Some(Method::Thor)).unwrap();
        assert_eq!(a.delta(&b, Slice::Isa).unwrap().to_string(), "3.59");
        assert!(a.delta(&b, Slice::Esa).is_err());
    }

    #[test]
    fn grouping_and_render() {
        let rows = CrossReport::from_eval_reports(&[eval(DomainTag::Laptop, 0.25), eval(DomainTag::Restaurant, 0.75)])
            .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].score(Benchmark::Restaurant, Slice::Isa), Some(75.0));
        let text = render_cross_table(&rows, Some(Setting::ZeroShot));
        assert!(text.contains("25.00 [31.83]"), "{text}");
        assert!(text.contains("bert-spc"));
        assert!(CrossReport::from_eval_reports(&[eval(DomainTag::Laptop, 0.1), eval(DomainTag::Laptop, 0.2)]).is_err());
        assert!(CrossReport::from_eval_reports(&[eval(DomainTag::Other, 0.1)]).is_err());
    }
}
