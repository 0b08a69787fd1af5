//! Classification metrics: per-class precision, recall, F1 and support,
//! macro and support-weighted averages, and overall accuracy.
//!
//! Undefined ratios (zero denominators) are reported as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub n_samples: usize,
    pub zero_division: String,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_report(
    y_true: &[usize],
    y_pred: &[usize],
    label_names: &[String],
) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidInput("cannot report on zero samples".into()));
    }
    let c = label_names.len();
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&l| l >= c) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside {c} classes"
        )));
    }
    let mut tp = vec![0usize; c];
    let mut predicted = vec![0usize; c];
    let mut support = vec![0usize; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let precision = ratio(tp[k], predicted[k]);
            let recall = ratio(tp[k], support[k]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label_name: label_names[k].clone(),
                precision,
                recall,
                f1,
                support: support[k],
            }
        })
        .collect();
    let n = y_true.len();
    let average = |weight: &dyn Fn(&ClassMetrics) -> f64| {
        let total: f64 = per_class.iter().map(weight).sum();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if total == 0.0 {
                0.0
            } else {
                per_class.iter().map(|m| weight(m) * f(m)).sum::<f64>() / total
            }
        };
        Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        }
    };
    Ok(MetricsReport {
        accuracy: ratio(tp.iter().sum(), n),
        macro_avg: average(&|_| 1.0),
        weighted_avg: average(&|m| m.support as f64),
        per_class,
        n_samples: n,
        zero_division: "zero".into(),
    })
}

impl MetricsReport {
    /// Text table in the usual classification-report layout.
    pub fn render(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|m| m.label_name.len())
            .max()
            .unwrap_or(0)
            .max("weighted avg".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>width$}  precision    recall  f1-score   support\n",
            ""
        );
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{:>width$}  {:>9.2} {:>9.2} {:>9.2} {:>9}",
                m.label_name,
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0,
                m.support
            );
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{:>width$}  {:>9} {:>9} {:>9.2} {:>9}",
            "accuracy",
            "",
            "",
            self.accuracy * 100.0,
            self.n_samples
        );
        for (name, a) in [
            ("macro avg", self.macro_avg),
            ("weighted avg", self.weighted_avg),
        ] {
            let _ = writeln!(
                out,
                "{:>width$}  {:>9.2} {:>9.2} {:>9.2} {:>9}",
                name,
                a.precision * 100.0,
                a.recall * 100.0,
                a.f1 * 100.0,
                self.n_samples
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: i64,
}

/// Signed differences `a - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub per_class: Vec<ClassDelta>,
    pub max_abs_delta: f64,
    pub exact_equal: bool,
}

pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<DeltaReport> {
    let names = |r: &MetricsReport| {
        r.per_class
            .iter()
            .map(|m| m.label_name.clone())
            .collect::<Vec<_>>()
    };
    if names(a) != names(b) {
        return Err(Error::InvalidInput(
            "reports cover different label sets".into(),
        ));
    }
    let avg = |x: &Averages, y: &Averages| Averages {
        precision: x.precision - y.precision,
        recall: x.recall - y.recall,
        f1: x.f1 - y.f1,
    };
    let per_class: Vec<ClassDelta> = a
        .per_class
        .iter()
        .zip(&b.per_class)
        .map(|(x, y)| ClassDelta {
            precision: x.precision - y.precision,
            recall: x.recall - y.recall,
            f1: x.f1 - y.f1,
            support: x.support as i64 - y.support as i64,
        })
        .collect();
    let macro_avg = avg(&a.macro_avg, &b.macro_avg);
    let weighted_avg = avg(&a.weighted_avg, &b.weighted_avg);
    let accuracy = a.accuracy - b.accuracy;
    let max_abs_delta = per_class
        .iter()
        .flat_map(|d| [d.precision, d.recall, d.f1])
        .chain([
            accuracy,
            macro_avg.precision,
            macro_avg.recall,
            macro_avg.f1,
            weighted_avg.precision,
            weighted_avg.recall,
            weighted_avg.f1,
        ])
        .fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(DeltaReport {
        accuracy,
        macro_avg,
        weighted_avg,
        per_class,
        max_abs_delta,
        exact_equal: a == b,
    })
}
