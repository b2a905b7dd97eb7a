//! Published F1 scores (percent) for side-by-side reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::Slice;
use crate::pipelines::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    ZeroShot,
    FineTuned,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::ZeroShot => "zero-shot",
            Setting::FineTuned => "fine-tuned",
        })
    }
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "zero-shot" | "zeroshot" => Ok(Setting::ZeroShot),
            "fine-tuned" | "finetuned" => Ok(Setting::FineTuned),
            other => Err(format!("unknown setting `{other}` (expected zero-shot or fine-tuned)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Laptop,
    Restaurant,
}

impl std::str::FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "laptop" => Ok(Benchmark::Laptop),
            "restaurant" => Ok(Benchmark::Restaurant),
            other => Err(format!("unknown benchmark `{other}` (expected laptop or restaurant)")),
        }
    }
}

/// One table row; `method` is `None` for the BERT baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub method: Option<Method>,
    pub laptop_all: f64,
    pub laptop_isa: f64,
    pub restaurant_all: f64,
    pub restaurant_isa: f64,
}

impl ReferenceRow {
    pub fn get(&self, benchmark: Benchmark, slice: Slice) -> Option<f64> {
        match (benchmark, slice) {
            (Benchmark::Laptop, Slice::All) => Some(self.laptop_all),
            (Benchmark::Laptop, Slice::Isa) => Some(self.laptop_isa),
            (Benchmark::Restaurant, Slice::All) => Some(self.restaurant_all),
            (Benchmark::Restaurant, Slice::Isa) => Some(self.restaurant_isa),
            (_, Slice::Esa) => None,
        }
    }
}

const fn row(model: &'static str, method: Option<Method>, v: [f64; 4]) -> ReferenceRow {
    ReferenceRow { model, method, laptop_all: v[0], laptop_isa: v[1], restaurant_all: v[2], restaurant_isa: v[3] }
}

const THOR: Option<Method> = Some(Method::Thor);
const DRCR: Option<Method> = Some(Method::Drcr);
const TRCR: Option<Method> = Some(Method::Trcr);

const ZERO_SHOT: [ReferenceRow; 14] = [
    row("flan-t5-base", THOR, [51.06, 27.55, 53.32, 36.36]),
    row("flan-t5-base", DRCR, [55.29, 31.83, 57.94, 39.25]),
    row("flan-t5-base", TRCR, [55.98, 32.64, 58.31, 40.03]),
    row("flan-t5-large", THOR, [52.08, 32.16, 55.02, 38.77]),
    row("flan-t5-large", DRCR, [57.06, 37.14, 59.63, 42.36]),
    row("flan-t5-large", TRCR, [58.43, 38.89, 61.13, 43.85]),
    row("flan-t5-xxl", THOR, [56.57, 39.34, 62.75, 44.16]),
    row("flan-t5-xxl", DRCR, [62.26, 44.42, 65.34, 49.27]),
    row("flan-t5-xxl", TRCR, [64.55, 45.87, 67.29, 50.97]),
    row("gpt-3.5", THOR, [71.43, 68.81, 76.76, 71.90]),
    row("gpt-3.5", DRCR, [76.32, 72.13, 80.73, 75.68]),
    row("gpt-3.5", TRCR, [77.65, 73.41, 81.74, 76.82]),
    row("bert-spc", None, [21.76, 19.48, 25.34, 17.71]),
    row("bert-asp-scapt", None, [30.02, 25.49, 25.77, 13.70]),
];

const FINE_TUNED: [ReferenceRow; 14] = [
    row("flan-t5-base", THOR, [73.45, 63.24, 77.68, 68.18]),
    row("flan-t5-base", DRCR, [75.14, 65.75, 79.73, 70.86]),
    row("flan-t5-base", TRCR, [75.83, 65.84, 80.95, 71.51]),
    row("flan-t5-large", THOR, [74.80, 64.56, 79.02, 69.76]),
    row("flan-t5-large", DRCR, [76.48, 66.35, 80.55, 71.48]),
    row("flan-t5-large", TRCR, [77.15, 67.68, 81.59, 72.02]),
    row("flan-t5-xxl", THOR, [79.89, 77.32, 83.25, 74.53]),
    row("flan-t5-xxl", DRCR, [82.91, 79.64, 85.19, 77.08]),
    row("flan-t5-xxl", TRCR, [83.29, 80.44, 85.81, 78.34]),
    row("gpt-3.5", THOR, [78.11, 75.93, 82.72, 74.79]),
    row("gpt-3.5", DRCR, [79.26, 77.06, 85.88, 76.95]),
    row("gpt-3.5", TRCR, [79.96, 78.51, 86.25, 77.27]),
    row("bert-isaiv", None, [77.25, 78.29, 81.40, 69.66]),
    row("bert-asp-scapt", None, [79.15, 77.59, 83.79, 72.28]),
];

pub fn reference_table(setting: Setting) -> &'static [ReferenceRow] {
    match setting {
        Setting::ZeroShot => &ZERO_SHOT,
        Setting::FineTuned => &FINE_TUNED,
    }
}

/// Normalizes model names so `GPT-3.5`, `gpt-3.5-turbo` and `flan_t5_xxl`
/// find their rows.
pub(crate) fn canonical_model(name: &str) -> String {
    let n = name.to_ascii_lowercase().replace(['_', ' '], "-");
    let n = n.rsplit('/').next().unwrap_or(&n).to_string();
    if n.starts_with("gpt-3.5") {
        return "gpt-3.5".into();
    }
    n
}

pub fn reference_row(setting: Setting, model: &str, method: Option<Method>) -> Option<&'static ReferenceRow> {
    let model = canonical_model(model);
    reference_table(setting).iter().find(|r| r.model == model && r.method == method)
}

pub fn reference_score(
    setting: Setting,
    model: &str,
    method: Option<Method>,
    benchmark: Benchmark,
    slice: Slice,
) -> Option<f64> {
    reference_row(setting, model, method).and_then(|r| r.get(benchmark, slice))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_checks() {
        let z = |m, me, b, s| reference_score(Setting::ZeroShot, m, me, b, s);
        assert_eq!(z("flan-t5-base", THOR, Benchmark::Laptop, Slice::All), Some(51.06));
        assert_eq!(z("GPT-3.5", TRCR, Benchmark::Restaurant, Slice::Isa), Some(76.82));
        assert_eq!(z("gpt-3.5-turbo", TRCR, Benchmark::Restaurant, Slice::Isa), Some(76.82));
        assert_eq!(z("bert-spc", None, Benchmark::Restaurant, Slice::Isa), Some(17.71));
        assert_eq!(z("flan-t5-base", THOR, Benchmark::Laptop, Slice::Esa), None);
        assert_eq!(z("flan-t5-base", Some(Method::Direct), Benchmark::Laptop, Slice::All), None);
        assert_eq!(
            reference_score(Setting::FineTuned, "google/flan-t5-xxl", TRCR, Benchmark::Laptop, Slice::Isa),
            Some(80.44)
        );
    }

    #[test]
    fn every_llm_has_three_methods() {
        for setting in [Setting::ZeroShot, Setting::FineTuned] {
            for model in ["flan-t5-base", "flan-t5-large", "flan-t5-xxl", "gpt-3.5"] {
                for m in [THOR, DRCR, TRCR] {
                    assert!(reference_row(setting, model, m).is_some(), "{model} {m:?}");
                }
            }
        }
    }
}
