//! Top-2 smooth loss, cross-entropy, cost-sensitive class weights, and their
//! combination, each returning the value together with the analytic gradient
//! with respect to the score vector.
//!
//! Scores are plain `&[f64]` slices of length `n >= 2` with finite entries.
//!
//! The top-2 loss enumerates unordered label pairs `{i, j}` with `i < j`.
//! With `h = (s_i + s_j) / 2` and margin `Δ = 1` when the pair misses the true
//! label `y`, the loss is
//!
//! ```text
//! τ·LSE_pairs((Δ + h)/τ) − τ·LSE_{pairs ∋ y}(h/τ)
//! ```
//!
//! Pairs containing `y` appear in both sums with `Δ = 0`, so the value reduces
//! to `τ·softplus(LSE_{pairs ∌ y}((1 + h)/τ) − LSE_{pairs ∋ y}(h/τ))`, which is
//! what gets evaluated. This keeps tiny losses accurate (no cancellation
//! between two large log-sum-exp terms) and makes the `n = 2` case exactly 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class sample counts `N_y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    counts: Vec<u64>,
}

impl ClassStats {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidStats(format!(
                "need at least 2 classes, got {}",
                counts.len()
            )));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::InvalidStats("total sample count is 0".into()));
        }
        Ok(ClassStats { counts })
    }

    /// Histogram of `labels` over `n_classes` bins.
    pub fn from_labels(labels: &[usize], n_classes: usize) -> Result<Self> {
        let mut counts = vec![0u64; n_classes];
        for &label in labels {
            *counts.get_mut(label).ok_or(Error::Label { label, n_classes })? += 1;
        }
        ClassStats::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Cost weights `w_y`, one per class, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        ClassWeights(vec![1.0 / n_classes as f64; n_classes])
    }

    pub fn from_vec(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidArgument(
                "class weights must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "class weights sum to {sum}, expected 1"
            )));
        }
        Ok(ClassWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `w_y = (1 − N_y / ΣN) / (n − 1)`: rarer classes get larger weights.
pub fn class_weights(stats: &ClassStats) -> ClassWeights {
    let n = stats.n_classes() as f64;
    let total = stats.total() as f64;
    ClassWeights(
        stats
            .counts()
            .iter()
            .map(|&c| (1.0 - c as f64 / total) / (n - 1.0))
            .collect(),
    )
}

/// Trade-off `lambda` between cross-entropy and the top-2 term, temperature
/// `tau`, and L2 coefficient `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub tau: f64,
    pub mu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.2,
            tau: 1.0,
            mu: 0.25,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda {} not in [0, 1]",
                self.lambda
            )));
        }
        check_tau(self.tau)?;
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mu {} must be finite and >= 0",
                self.mu
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    /// ∂loss/∂s, same length as the score vector.
    pub grad: Vec<f64>,
}

/// An unordered pair of labels, `first < second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Top2Subset {
    pub first: usize,
    pub second: usize,
}

impl Top2Subset {
    pub fn new(a: usize, b: usize, n_classes: usize) -> Result<Self> {
        let (first, second) = if a < b { (a, b) } else { (b, a) };
        if first == second || second >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "({a}, {b}) is not a pair of distinct labels below {n_classes}"
            )));
        }
        Ok(Top2Subset { first, second })
    }

    pub fn contains(&self, label: usize) -> bool {
        self.first == label || self.second == label
    }

    /// 1 when `label` is missing from the pair, else 0.
    pub fn margin(&self, label: usize) -> f64 {
        if self.contains(label) {
            0.0
        } else {
            1.0
        }
    }

    pub fn half_sum(&self, scores: &[f64]) -> f64 {
        0.5 * (scores[self.first] + scores[self.second])
    }
}

/// All `n(n−1)/2` unordered pairs in lexicographic order.
pub fn top2_subsets(n_classes: usize) -> impl Iterator<Item = Top2Subset> {
    (0..n_classes).flat_map(move |first| {
        (first + 1..n_classes).map(move |second| Top2Subset { first, second })
    })
}

fn check_scores(scores: &[f64], label: usize) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 scores, got {}",
            scores.len()
        )));
    }
    if label >= scores.len() {
        return Err(Error::Label {
            label,
            n_classes: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Domain(format!("score {i} is not finite")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("temperature {tau} must be finite and > 0")))
    }
}

/// Max-shifted log-sum-exp. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Top-2 smooth loss with temperature `tau`, and its gradient.
pub fn top2_smooth_loss(scores: &[f64], label: usize, tau: f64) -> Result<LossValueGrad> {
    check_scores(scores, label)?;
    check_tau(tau)?;
    let n = scores.len();
    let mut grad = vec![0.0; n];
    if n == 2 {
        return Ok(LossValueGrad { value: 0.0, grad });
    }

    // Pairs {y, j}: exponent h/τ.
    let with_label: Vec<f64> = (0..n)
        .map(|j| {
            if j == label {
                f64::NEG_INFINITY
            } else {
                0.5 * (scores[label] + scores[j]) / tau
            }
        })
        .collect();
    let lse_with = log_sum_exp(&with_label);

    // Pairs missing y: exponent (1 + h)/τ.
    let without_label: Vec<(usize, usize, f64)> = top2_subsets(n)
        .filter(|p| !p.contains(label))
        .map(|p| (p.first, p.second, (1.0 + p.half_sum(scores)) / tau))
        .collect();
    let exps: Vec<f64> = without_label.iter().map(|t| t.2).collect();
    let lse_without = log_sum_exp(&exps);

    let gap = lse_without - lse_with;
    let value = tau * softplus(gap);
    // Share of the first-sum mass held by pairs that miss y.
    let miss = sigmoid(gap);

    grad[label] = -0.5 * miss;
    for (j, &e) in with_label.iter().enumerate() {
        if j != label {
            grad[j] -= 0.5 * miss * (e - lse_with).exp();
        }
    }
    for &(a, b, e) in &without_label {
        let q = 0.5 * miss * (e - lse_without).exp();
        grad[a] += q;
        grad[b] += q;
    }
    Ok(LossValueGrad { value, grad })
}

/// The `tau → 0⁺` limit of [`top2_smooth_loss`]: the hard top-2 margin loss
/// `max_pairs(Δ + h) − max_{pairs ∋ y}(h)`.
pub fn top2_hard_reference(scores: &[f64], label: usize) -> Result<f64> {
    check_scores(scores, label)?;
    let n = scores.len();
    let all = top2_subsets(n)
        .map(|p| p.margin(label) + p.half_sum(scores))
        .fold(f64::NEG_INFINITY, f64::max);
    let with_label = top2_subsets(n)
        .filter(|p| p.contains(label))
        .map(|p| p.half_sum(scores))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(all - with_label)
}

/// Categorical cross-entropy `−ln softmax(s)_y`.
pub fn cross_entropy(scores: &[f64], label: usize) -> Result<LossValueGrad> {
    check_scores(scores, label)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut grad: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = grad.iter().sum();
    let value = if scores[label] == max {
        // sum = 1 + rest; ln_1p keeps precision for dominant true scores.
        (sum - 1.0).max(0.0).ln_1p()
    } else {
        (max - scores[label]) + sum.ln()
    };
    for g in &mut grad {
        *g /= sum;
    }
    grad[label] -= 1.0;
    Ok(LossValueGrad { value, grad })
}

/// Data terms of the combined objective:
/// `(1 − λ)·CE(s, y) + w_y·λ·L_top2(s, y; τ)`.
///
/// The L2 term lives with the network parameters, see
/// [`crate::model::l2_penalty`].
pub fn combined_data_loss(
    scores: &[f64],
    label: usize,
    weights: &ClassWeights,
    cfg: &LossConfig,
) -> Result<LossValueGrad> {
    cfg.validate()?;
    if weights.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} class weights for {} scores",
            weights.len(),
            scores.len()
        )));
    }
    let ce = cross_entropy(scores, label)?;
    let top2 = top2_smooth_loss(scores, label, cfg.tau)?;
    let ce_coef = 1.0 - cfg.lambda;
    let top2_coef = weights.get(label) * cfg.lambda;
    let value = ce_coef * ce.value + top2_coef * top2.value;
    let grad = ce
        .grad
        .iter()
        .zip(&top2.grad)
        .map(|(c, t)| ce_coef * c + top2_coef * t)
        .collect();
    Ok(LossValueGrad { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn reference_count_weights() {
        let stats = ClassStats::new(vec![24930, 2979, 4485, 6029, 4911, 2240, 6826]).unwrap();
        assert_eq!(stats.total(), 52_400);
        let w = class_weights(&stats);
        assert!(close(w.get(0), 0.0873728, 1e-6));
        assert!(close(w.get(5), 0.1595420, 1e-6));
        assert!(close(w.as_slice().iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn uniform_and_two_class_weights() {
        let w = class_weights(&ClassStats::new(vec![40; 7]).unwrap());
        for &v in w.as_slice() {
            assert!(close(v, 1.0 / 7.0, 1e-15));
        }
        let w = class_weights(&ClassStats::new(vec![1, 3]).unwrap());
        assert_eq!(w.as_slice(), &[0.75, 0.25]);
    }

    #[test]
    fn invalid_stats() {
        assert!(matches!(ClassStats::new(vec![5]), Err(Error::InvalidStats(_))));
        assert!(matches!(
            ClassStats::new(vec![0, 0, 0]),
            Err(Error::InvalidStats(_))
        ));
        assert!(matches!(
            ClassStats::from_labels(&[0, 3], 3),
            Err(Error::Label { label: 3, .. })
        ));
    }

    #[test]
    fn top2_two_classes_is_zero() {
        for y in 0..2 {
            let out = top2_smooth_loss(&[3.7, -1.2], y, 0.5).unwrap();
            assert_eq!(out.value, 0.0);
            assert_eq!(out.grad, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn top2_hand_enumerated() {
        let out = top2_smooth_loss(&[0.0, 0.0, 0.0], 0, 1.0).unwrap();
        assert!(close(out.value, 0.858_297_533_372_105_8, 1e-12));
        let out = top2_smooth_loss(&[10.0, 0.0, 0.0], 0, 1.0).unwrap();
        assert!(close(out.value, 0.009_116_140_879_149_891, 1e-14));
    }

    #[test]
    fn top2_errors() {
        assert!(matches!(
            top2_smooth_loss(&[0.0, 1.0, 2.0], 3, 1.0),
            Err(Error::Label { .. })
        ));
        assert!(matches!(
            top2_smooth_loss(&[0.0, f64::NAN, 2.0], 0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            top2_smooth_loss(&[0.0, 1.0, 2.0], 0, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(top2_smooth_loss(&[1.0], 0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn hard_reference_examples() {
        assert_eq!(top2_hard_reference(&[10.0, 0.0, 0.0], 0).unwrap(), 0.0);
        assert_eq!(top2_hard_reference(&[0.0, 5.0, 5.0], 0).unwrap(), 3.5);
        assert_eq!(top2_hard_reference(&[2.0, -4.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let out = cross_entropy(&[0.3; 7], 4).unwrap();
        assert!(close(out.value, 7f64.ln(), 1e-14));
        let out = cross_entropy(&[1.0, 0.0], 0).unwrap();
        assert!(close(out.value, 0.313_261_687_518_222_8, 1e-15));
        let mut s = vec![0.0; 5];
        s[2] = 50.0;
        let out = cross_entropy(&s, 2).unwrap();
        assert!(out.value < 1e-20);
        assert!(out.value >= 0.0);
    }

    #[test]
    fn combined_degenerate_tradeoffs() {
        let s = [0.4, -1.3, 2.2, 0.0];
        let w = ClassWeights::from_vec(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let ce = cross_entropy(&s, 1).unwrap();
        let top2 = top2_smooth_loss(&s, 1, 0.7).unwrap();

        let cfg = LossConfig { lambda: 0.0, tau: 0.7, mu: 0.0 };
        assert_eq!(combined_data_loss(&s, 1, &w, &cfg).unwrap(), ce);

        let cfg = LossConfig { lambda: 1.0, tau: 0.7, mu: 0.0 };
        let out = combined_data_loss(&s, 1, &w, &cfg).unwrap();
        assert_eq!(out.value, 0.2 * top2.value);
        let scaled: Vec<f64> = top2.grad.iter().map(|g| 0.2 * g).collect();
        assert_eq!(out.grad, scaled);
    }

    #[test]
    fn combined_hand_value() {
        let w = ClassWeights::uniform(3);
        let out = combined_data_loss(&[0.0; 3], 0, &w, &LossConfig::default()).unwrap();
        assert!(close(out.value, 0.936_109_666_492_628_1, 1e-12));
    }

    #[test]
    fn combined_shape_error() {
        let w = ClassWeights::uniform(4);
        assert!(matches!(
            combined_data_loss(&[0.0; 3], 0, &w, &LossConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = [
            LossConfig { lambda: 1.5, ..Default::default() },
            LossConfig { tau: 0.0, ..Default::default() },
            LossConfig { mu: -0.1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn subsets_enumeration() {
        let pairs: Vec<_> = top2_subsets(4).map(|p| (p.first, p.second)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(top2_subsets(7).count(), 21);
        assert!(Top2Subset::new(2, 2, 4).is_err());
        assert_eq!(Top2Subset::new(3, 1, 4).unwrap(), Top2Subset { first: 1, second: 3 });
    }
}
