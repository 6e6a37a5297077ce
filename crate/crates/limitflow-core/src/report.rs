//! Shared report vocabulary.

use serde::{Deserialize, Serialize};

pub const EXACT_TOL: f64 = 1e-8;
pub const TREND_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Convergent,
    Inconclusive,
    Divergent,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Convergent
        } else {
            Verdict::Divergent
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Convergent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub exact: f64,
    pub trend: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { exact: EXACT_TOL, trend: TREND_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelValue {
    pub label: f64,
    pub value: f64,
}

pub fn defects_csv(rows: &[crate::inductive::DefectEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8")
}

/// Ratios `values[k] / values[k + 1]`.
pub fn successive_ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[0] / w[1]).collect()
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}
