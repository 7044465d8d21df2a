//! Confusion matrices, top-k accuracy, per-class precision/recall/F1 with
//! macro averaging, and plurality voting across models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::softmax;
use crate::matrix::Matrix;

/// Indices of the `k` largest entries, by descending value; equal values
/// keep ascending index order.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts: counts.into_iter().flatten().collect(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.n_classes.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, predicted)).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= n_classes) {
        Some(&label) => Err(Error::Label { label, n_classes }),
        None => Ok(()),
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    check_labels(truth, n_classes)?;
    check_labels(predicted, n_classes)?;
    let mut counts = vec![0u64; n_classes * n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        counts[t * n_classes + p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

/// Fraction of rows whose true label is among the `k` highest scores.
pub fn topk_accuracy(scores: &Matrix, truth: &[usize], k: usize) -> Result<f64> {
    if scores.rows() == 0 {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    if scores.rows() != truth.len() {
        return Err(Error::Shape(format!(
            "{} score rows vs {} labels",
            scores.rows(),
            truth.len()
        )));
    }
    if k == 0 || k > scores.cols() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            scores.cols()
        )));
    }
    check_labels(truth, scores.cols())?;
    let hits = scores
        .iter_rows()
        .zip(truth)
        .filter(|(row, &t)| top_k_indices(row, k).contains(&t))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub top1_accuracy: f64,
    /// Only available when computed from scores.
    pub top2_accuracy: Option<f64>,
}

/// Per-class precision, recall and `F1 = 2/(p⁻¹ + r⁻¹)`; 0/0 counts as 0.
/// `macro_f1` is the unweighted mean over classes.
pub fn macro_f1(cm: &ConfusionMatrix) -> MetricsReport {
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            let f1 = if precision > 0.0 && recall > 0.0 {
                2.0 / (1.0 / precision + 1.0 / recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64
    };
    MetricsReport {
        per_class,
        macro_f1,
        top1_accuracy: cm.accuracy(),
        top2_accuracy: None,
    }
}

/// Full report (confusion-derived metrics plus top-2 accuracy) from raw scores.
pub fn evaluate_scores(scores: &Matrix, truth: &[usize]) -> Result<MetricsReport> {
    let top2 = topk_accuracy(scores, truth, 2.min(scores.cols()))?;
    let predicted: Vec<usize> = scores.iter_rows().map(|r| top_k_indices(r, 1)[0]).collect();
    let cm = confusion(truth, &predicted, scores.cols())?;
    let mut report = macro_f1(&cm);
    report.top2_accuracy = Some(top2);
    Ok(report)
}

/// One model's predictions for a shared sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVotes {
    /// Top-1 class per sample.
    pub labels: Vec<usize>,
    /// Softmax probabilities per sample.
    pub probabilities: Matrix,
}

impl ModelVotes {
    pub fn from_scores(scores: &Matrix) -> Self {
        let mut probabilities = Matrix::zeros(scores.rows(), scores.cols());
        let mut labels = Vec::with_capacity(scores.rows());
        for (i, row) in scores.iter_rows().enumerate() {
            labels.push(top_k_indices(row, 1)[0]);
            probabilities.row_mut(i).copy_from_slice(&softmax(row));
        }
        ModelVotes {
            labels,
            probabilities,
        }
    }
}

/// Plurality of top-1 votes per sample. Ties go to the highest mean softmax
/// probability among the tied classes, then to the lowest class index.
pub fn majority_vote(models: &[ModelVotes]) -> Result<Vec<usize>> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("majority vote needs at least one model".into()))?;
    let n_samples = first.labels.len();
    let n_classes = first.probabilities.cols();
    for m in models {
        if m.labels.len() != n_samples
            || m.probabilities.rows() != n_samples
            || m.probabilities.cols() != n_classes
        {
            return Err(Error::Shape(
                "models disagree on sample count or class count".into(),
            ));
        }
        check_labels(&m.labels, n_classes)?;
    }

    let mean_probs = mean_probabilities(models);
    let mut votes = vec![0usize; n_classes];
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        votes.iter_mut().for_each(|v| *v = 0);
        for m in models {
            votes[m.labels[i]] += 1;
        }
        let most = *votes.iter().max().expect("at least one class");
        let probs = mean_probs.row(i);
        let winner = (0..n_classes)
            .filter(|&c| votes[c] == most)
            .reduce(|best, c| if probs[c] > probs[best] { c } else { best })
            .expect("a class holds the plurality");
        out.push(winner);
    }
    Ok(out)
}

/// Elementwise mean of the models' probability rows.
pub fn mean_probabilities(models: &[ModelVotes]) -> Matrix {
    let first = &models[0].probabilities;
    let mut mean = Matrix::zeros(first.rows(), first.cols());
    for m in models {
        for (acc, p) in mean.as_mut_slice().iter_mut().zip(m.probabilities.as_slice()) {
            *acc += p;
        }
    }
    let inv = 1.0 / models.len() as f64;
    mean.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
    mean
}
