//! Evaluation: per-class and aggregate precision/recall/F1, confusion
//! matrices, exact-match span scoring, and Krippendorff's alpha for
//! inter-annotator agreement.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::model::Span;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold and predicted sequences differ in length: {gold} vs {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("value `{0}` does not appear in the label list")]
    UnlistedLabel(String),
    #[error("Krippendorff's alpha is undefined: {0}")]
    AlphaUndefined(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification or span-scoring report. For span scoring the confusion
/// matrix is empty (span mismatches have no single gold/pred cell) and
/// `accuracy` is absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub labels: Vec<String>,
    pub per_class: Vec<ClassReport>,
    pub micro: PrfScores,
    pub macro_avg: PrfScores,
    pub weighted: PrfScores,
    pub accuracy: Option<f64>,
    /// Gold rows by predicted columns, indexed like `labels`.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

impl Metrics {
    /// Plain-text table, one row per class plus the aggregates.
    pub fn to_table(&self) -> String {
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .max()
            .unwrap_or(5)
            .max(8);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "label", "precision", "recall", "f1", "support"
        );
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        for (name, s) in [
            ("micro", self.micro),
            ("macro", self.macro_avg),
            ("weighted", self.weighted),
        ] {
            out.push_str(&format!(
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                name, s.precision, s.recall, s.f1, self.total
            ));
        }
        if let Some(acc) = self.accuracy {
            out.push_str(&format!("{:<width$}  {:>9.4}\n", "accuracy", acc));
        }
        out
    }

    /// Confusion matrix as CSV, gold rows by predicted columns.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            out.push_str(label);
            for count in row {
                out.push(',');
                out.push_str(&count.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f1)
}

/// Options for [`classification_report_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    /// Exclude classes with zero gold and predicted occurrences from the
    /// macro average. Default: included.
    pub exclude_empty_from_macro: bool,
}

/// Standard multiclass report over parallel gold/predicted label lists.
/// `labels` fixes row order and must cover every occurring value.
pub fn classification_report(
    gold: &[String],
    pred: &[String],
    labels: &[String],
) -> Result<Metrics, EvalError> {
    classification_report_with(gold, pred, labels, ReportOptions::default())
}

pub fn classification_report_with(
    gold: &[String],
    pred: &[String],
    labels: &[String],
    opts: ReportOptions,
) -> Result<Metrics, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let lookup = |v: &String| {
        index
            .get(v.as_str())
            .copied()
            .ok_or_else(|| EvalError::UnlistedLabel(v.clone()))
    };

    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        let gi = lookup(g)?;
        let pi = lookup(p)?;
        confusion[gi][pi] += 1;
        if gi == pi {
            correct += 1;
        }
    }

    let mut per_class = Vec::with_capacity(k);
    let mut predicted_counts = vec![0usize; k];
    for row in &confusion {
        for (j, &v) in row.iter().enumerate() {
            predicted_counts[j] += v;
        }
    }
    let mut tp_total = 0usize;
    for i in 0..k {
        let tp = confusion[i][i];
        let support: usize = confusion[i].iter().sum();
        let (p, r, f1) = prf(tp, predicted_counts[i] - tp, support - tp);
        tp_total += tp;
        per_class.push(ClassReport {
            label: labels[i].clone(),
            precision: p,
            recall: r,
            f1,
            support,
        });
    }

    let total = gold.len();
    let (micro_p, micro_r, micro_f1) = prf(tp_total, total - tp_total, total - tp_total);
    let micro = PrfScores {
        precision: micro_p,
        recall: micro_r,
        f1: micro_f1,
    };

    let macro_classes: Vec<&ClassReport> = per_class
        .iter()
        .enumerate()
        .filter(|(i, c)| {
            !opts.exclude_empty_from_macro || c.support > 0 || predicted_counts[*i] > 0
        })
        .map(|(_, c)| c)
        .collect();
    let macro_avg = average(&macro_classes, |_| 1.0);
    let weighted = average(&per_class.iter().collect::<Vec<_>>(), |c| c.support as f64);

    Ok(Metrics {
        labels: labels.to_vec(),
        per_class,
        micro,
        macro_avg,
        weighted,
        accuracy: Some(if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }),
        confusion,
        total,
    })
}

fn average(classes: &[&ClassReport], weight: impl Fn(&ClassReport) -> f64) -> PrfScores {
    let total: f64 = classes.iter().map(|c| weight(c)).sum();
    if total == 0.0 {
        return PrfScores::default();
    }
    let mut s = PrfScores::default();
    for c in classes {
        let w = weight(c) / total;
        s.precision += w * c.precision;
        s.recall += w * c.recall;
        s.f1 += w * c.f1;
    }
    s
}

/// Exact-match span scoring: a predicted span is a true positive iff label,
/// start and end all match a gold span. Micro-averaged overall and per
/// entity label; parallel lists, one span set per utterance.
pub fn span_f1(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Result<Metrics, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    #[derive(Default, Clone, Copy)]
    struct Counts {
        tp: usize,
        fp: usize,
        fn_: usize,
    }
    let mut by_label: HashMap<String, Counts> = HashMap::new();
    let mut overall = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        let gset: HashSet<Span> = g.iter().copied().collect();
        let pset: HashSet<Span> = p.iter().copied().collect();
        for span in &pset {
            let entry = by_label.entry(span.label.name().to_string()).or_default();
            if gset.contains(span) {
                entry.tp += 1;
                overall.tp += 1;
            } else {
                entry.fp += 1;
                overall.fp += 1;
            }
        }
        for span in &gset {
            if !pset.contains(span) {
                by_label
                    .entry(span.label.name().to_string())
                    .or_default()
                    .fn_ += 1;
                overall.fn_ += 1;
            }
        }
    }

    let mut labels: Vec<String> = by_label.keys().cloned().collect();
    labels.sort();
    let per_class: Vec<ClassReport> = labels
        .iter()
        .map(|l| {
            let c = by_label[l];
            let (p, r, f1) = prf(c.tp, c.fp, c.fn_);
            ClassReport {
                label: l.clone(),
                precision: p,
                recall: r,
                f1,
                support: c.tp + c.fn_,
            }
        })
        .collect();
    let (p, r, f1) = prf(overall.tp, overall.fp, overall.fn_);
    let micro = PrfScores {
        precision: p,
        recall: r,
        f1,
    };
    let refs: Vec<&ClassReport> = per_class.iter().collect();
    let macro_avg = average(&refs, |_| 1.0);
    let weighted = average(&refs, |c| c.support as f64);

    Ok(Metrics {
        labels,
        per_class,
        micro,
        macro_avg,
        weighted,
        accuracy: None,
        confusion: Vec::new(),
        total: gold.len(),
    })
}

/// Items-by-raters grid of nominal labels; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatingsMatrix {
    pub raters: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RatingsMatrix {
    pub fn new(raters: Vec<String>, rows: Vec<Vec<Option<String>>>) -> RatingsMatrix {
        RatingsMatrix { raters, rows }
    }
}

/// Nominal Krippendorff's alpha via the coincidence-matrix formulation:
/// alpha = 1 - D_o / D_e, where items with fewer than two ratings are
/// excluded and each ordered pair within an item contributes 1/(m_u - 1).
///
/// Errors when fewer than two pairable values exist or when every pairable
/// value belongs to one category (expected disagreement zero).
pub fn krippendorff_alpha(ratings: &RatingsMatrix) -> Result<f64, EvalError> {
    let mut categories: Vec<String> = Vec::new();
    let mut cat_index: HashMap<String, usize> = HashMap::new();
    let mut intern = |v: &str| -> usize {
        if let Some(&i) = cat_index.get(v) {
            return i;
        }
        let i = categories.len();
        categories.push(v.to_string());
        cat_index.insert(v.to_string(), i);
        i
    };

    let mut item_values: Vec<Vec<usize>> = Vec::new();
    for row in &ratings.rows {
        let values: Vec<usize> = row.iter().flatten().map(|v| intern(v)).collect();
        if values.len() >= 2 {
            item_values.push(values);
        }
    }

    let k = categories.len();
    let mut coincidence = vec![vec![0.0f64; k]; k];
    for values in &item_values {
        let m = values.len() as f64;
        for (i, &a) in values.iter().enumerate() {
            for (j, &b) in values.iter().enumerate() {
                if i != j {
                    coincidence[a][b] += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let marginals: Vec<f64> = (0..k).map(|c| coincidence[c].iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    if n < 2.0 {
        return Err(EvalError::AlphaUndefined(
            "fewer than two pairable values".into(),
        ));
    }

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for l in 0..k {
            if c != l {
                observed += coincidence[c][l];
                expected += marginals[c] * marginals[l];
            }
        }
    }
    let d_o = observed / n;
    let d_e = expected / (n * (n - 1.0));
    if d_e == 0.0 {
        return Err(EvalError::AlphaUndefined(
            "all pairable values belong to a single category".into(),
        ));
    }
    Ok(1.0 - d_o / d_e)
}
