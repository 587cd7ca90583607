//! Confusion counts, the six evaluation scores, and boxplot statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predicted} predictions for {actual} labels")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("no samples to evaluate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_counts(predicted: &[u8], actual: &[u8]) -> Result<ConfusionCounts> {
    if predicted.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p != 0, a != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Names in report order.
pub const METRIC_NAMES: [&str; 6] = ["precision", "accuracy", "specificity", "sensitivity", "f1", "mcc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub precision: f64,
    pub accuracy: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Metrics whose denominator was zero and were reported as 0.
    pub degenerate_flags: Vec<String>,
}

impl MetricsRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "precision" => self.precision,
            "accuracy" => self.accuracy,
            "specificity" => self.specificity,
            "sensitivity" => self.sensitivity,
            "f1" => self.f1,
            "mcc" => self.mcc,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.precision,
            self.accuracy,
            self.specificity,
            self.sensitivity,
            self.f1,
            self.mcc,
        ]
    }
}

pub fn compute_metrics(c: &ConfusionCounts) -> MetricsRecord {
    let mut flags = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            flags.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = ratio("precision", tp, tp + fp);
    let accuracy = ratio("accuracy", tp + tn, tp + fp + tn + fn_);
    let specificity = ratio("specificity", tn, tn + fp);
    let sensitivity = ratio("sensitivity", tp, tp + fn_);
    let f1 = ratio("f1", 2.0 * precision * sensitivity, precision + sensitivity);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio("mcc", tp * tn - fp * fn_, mcc_den);
    MetricsRecord {
        precision,
        accuracy,
        specificity,
        sensitivity,
        f1,
        mcc: mcc.clamp(-1.0, 1.0),
        degenerate_flags: flags,
    }
}

/// Five-number summary with Tukey outliers.
///
/// Quartiles interpolate linearly between order statistics at position
/// `p * (n - 1)` (the common "type 7" definition). Values outside
/// `[q1 - 1.5 IQR, q3 + 1.5 IQR]` are outliers, and `min`/`max` are the
/// whisker ends: the extreme values that are not outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
    pub n: usize,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let (inside, outliers): (Vec<f64>, Vec<f64>) = sorted.iter().partition(|&&v| v >= lo && v <= hi);
    Ok(DistributionSummary {
        min: inside.first().copied().unwrap_or(q1).min(q1),
        q1,
        median,
        q3,
        max: inside.last().copied().unwrap_or(q3).max(q3),
        outliers,
        n: values.len(),
    })
}
