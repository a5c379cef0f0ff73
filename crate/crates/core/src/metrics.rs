//! Per-label precision/recall/F1, macro averages and confusion matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::role::{RhetoricalRole, NUM_ROLES};

/// Which labels enter the macro average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelUniverse {
    /// Labels present in the gold labels or the predictions.
    #[default]
    Observed,
    /// Labels present in the gold labels.
    Gold,
    /// All seven roles, zero-support ones included.
    All,
}

impl FromStr for LabelUniverse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "observed" => Ok(Self::Observed),
            "gold" => Ok(Self::Gold),
            "all" => Ok(Self::All),
            _ => Err(Error::InvalidArgument(format!(
                "unknown label universe {s:?} (expected observed, gold or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: usize,
    /// Predicted occurrences.
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub universe: LabelUniverse,
    pub per_label: BTreeMap<RhetoricalRole, LabelMetrics>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub micro_accuracy: f64,
    /// `confusion[gold][predicted]` sentence counts, indexed by role code.
    pub confusion: Vec<Vec<usize>>,
    /// Sentences with no predicted label, per gold role.
    pub abstained: Vec<usize>,
    pub sentences: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Pool every (gold, predicted) pair across documents and score them.
pub fn evaluate_labels(gold: &[Vec<usize>], pred: &[Vec<usize>], universe: LabelUniverse) -> Result<MetricsReport> {
    let pred: Vec<Vec<Option<usize>>> = pred.iter().map(|d| d.iter().map(|&p| Some(p)).collect()).collect();
    evaluate_predictions(gold, &pred, universe)
}

/// Like [`evaluate_labels`], but `None` predictions are allowed; they count
/// against recall of the gold label and toward no label's precision.
pub fn evaluate_predictions(gold: &[Vec<usize>], pred: &[Vec<Option<usize>>], universe: LabelUniverse) -> Result<MetricsReport> {
    if gold.is_empty() {
        return Err(Error::InvalidArgument("no documents to evaluate".into()));
    }
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold documents, {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut confusion = vec![vec![0usize; NUM_ROLES]; NUM_ROLES];
    let mut abstained = vec![0usize; NUM_ROLES];
    let mut total = 0;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Shape(format!(
                "document {i}: {} gold labels, {} predicted",
                g.len(),
                p.len()
            )));
        }
        for (&a, &b) in g.iter().zip(p) {
            if a >= NUM_ROLES || b.is_some_and(|b| b >= NUM_ROLES) {
                return Err(Error::InvalidArgument(format!("label code out of range in document {i}")));
            }
            match b {
                Some(b) => confusion[a][b] += 1,
                None => abstained[a] += 1,
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no sentences to evaluate".into()));
    }
    let mut per_label = BTreeMap::new();
    let mut correct = 0;
    for role in RhetoricalRole::ALL {
        let c = role.code();
        let tp = confusion[c][c];
        correct += tp;
        let support: usize = confusion[c].iter().sum::<usize>() + abstained[c];
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let included = match universe {
            LabelUniverse::All => true,
            LabelUniverse::Gold => support > 0,
            LabelUniverse::Observed => support > 0 || predicted > 0,
        };
        if !included {
            continue;
        }
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_label.insert(
            role,
            LabelMetrics {
                precision,
                recall,
                f1,
                support,
                predicted,
            },
        );
    }
    let k = per_label.len() as f64;
    let mean = |f: fn(&LabelMetrics) -> f64| per_label.values().map(f).sum::<f64>() / k;
    Ok(MetricsReport {
        universe,
        macro_p: mean(|m| m.precision),
        macro_r: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        micro_accuracy: ratio(correct, total),
        per_label,
        confusion,
        abstained,
        sentences: total,
    })
}

/// `role,precision,recall,f1,support`, one row per reported label.
pub fn metrics_csv(r: &MetricsReport) -> String {
    let mut out = String::from("role,precision,recall,f1,support\n");
    for (role, m) in &r.per_label {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{}",
            role.abbrev(),
            m.precision,
            m.recall,
            m.f1,
            m.support
        );
    }
    let _ = writeln!(
        out,
        "MACRO,{:.4},{:.4},{:.4},{}",
        r.macro_p, r.macro_r, r.macro_f1, r.sentences
    );
    out
}

/// Macro-F1 of always predicting the most frequent gold label (lowest code on ties).
pub fn majority_baseline(gold: &[Vec<usize>], universe: LabelUniverse) -> Result<MetricsReport> {
    let mut counts = [0usize; NUM_ROLES];
    for &y in gold.iter().flatten() {
        if y < NUM_ROLES {
            counts[y] += 1;
        }
    }
    let best = (0..NUM_ROLES).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    let pred: Vec<Vec<usize>> = gold.iter().map(|d| vec![best; d.len()]).collect();
    evaluate_labels(gold, &pred, universe)
}
