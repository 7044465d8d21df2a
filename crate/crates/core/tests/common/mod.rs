#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::Rng;
use toploss::loss::{combined_data_loss, ClassWeights, LossConfig};
use toploss::model::{l2_penalty, Network};
use toploss::Matrix;

pub const PREC: usize = 1024;
const RM: RoundingMode = RoundingMode::ToEven;

pub fn random_scores(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Top-2 smooth loss by direct enumeration of both log-sum-exps in 1024-bit
/// arithmetic, no stabilization.
pub struct Enumeration {
    cc: Consts,
}

impl Enumeration {
    pub fn new() -> Self {
        Enumeration {
            cc: Consts::new().expect("constants cache"),
        }
    }

    pub fn top2(&mut self, s: &[f64], y: usize, tau: f64) -> BigFloat {
        let n = s.len();
        let half = BigFloat::from_f64(0.5, PREC);
        let one = BigFloat::from_f64(1.0, PREC);
        let t = BigFloat::from_f64(tau, PREC);
        let zero = BigFloat::from_f64(0.0, PREC);
        let (mut all, mut with_y) = (zero.clone(), zero);
        for i in 0..n {
            for j in i + 1..n {
                let h = BigFloat::from_f64(s[i], PREC)
                    .add(&BigFloat::from_f64(s[j], PREC), PREC, RM)
                    .mul(&half, PREC, RM);
                if i == y || j == y {
                    let e = h.div(&t, PREC, RM).exp(PREC, RM, &mut self.cc);
                    all = all.add(&e, PREC, RM);
                    with_y = with_y.add(&e, PREC, RM);
                } else {
                    let e = one.add(&h, PREC, RM).div(&t, PREC, RM).exp(PREC, RM, &mut self.cc);
                    all = all.add(&e, PREC, RM);
                }
            }
        }
        let a = all.ln(PREC, RM, &mut self.cc);
        let b = with_y.ln(PREC, RM, &mut self.cc);
        a.sub(&b, PREC, RM).mul(&t, PREC, RM)
    }

    /// `|approx − exact| / |exact|`, or `|approx|` when the exact value is 0,
    /// rounded to f64 through its decimal form.
    pub fn relative_error(&mut self, approx: f64, exact: &BigFloat) -> f64 {
        let diff = BigFloat::from_f64(approx, PREC).sub(exact, PREC, RM).abs();
        let err = if exact.is_zero() {
            diff
        } else {
            diff.div(&exact.abs(), PREC, RM)
        };
        self.decimal(&err)
    }

    pub fn decimal(&mut self, x: &BigFloat) -> f64 {
        let text = x
            .format(astro_float::Radix::Dec, RM, &mut self.cc)
            .expect("decimal formatting");
        text.parse().unwrap_or_else(|_| panic!("unparseable {text}"))
    }
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`.
pub fn vector_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(floor, f64::max);
    diff / scale
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Mean combined data loss over the batch plus the L2 penalty.
pub fn full_objective(
    net: &Network,
    x: &Matrix,
    labels: &[usize],
    weights: &ClassWeights,
    cfg: &LossConfig,
) -> f64 {
    let scores = net.scores(x).unwrap();
    let data: f64 = scores
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| combined_data_loss(row, y, weights, cfg).unwrap().value)
        .sum();
    data / labels.len() as f64 + l2_penalty(net, cfg.mu)
}

/// Largest per-parameter relative error of the analytic network gradient
/// against central differences of `full_objective`. Denominators are floored
/// at 1e-4 of the largest gradient component.
pub fn network_gradient_error(
    net: &Network,
    x: &Matrix,
    labels: &[usize],
    weights: &ClassWeights,
    cfg: &LossConfig,
    h: f64,
) -> f64 {
    let (scores, cache) = net.forward(x).unwrap();
    let mut grads = Matrix::zeros(scores.rows(), scores.cols());
    for (i, (row, &y)) in scores.iter_rows().zip(labels).enumerate() {
        grads
            .row_mut(i)
            .copy_from_slice(&combined_data_loss(row, y, weights, cfg).unwrap().grad);
    }
    let analytic = net.backward(&cache, &grads, cfg.mu).unwrap();
    let mut probe = net.clone();
    let mut pairs = Vec::new();
    for l in 0..net.layers().len() {
        for i in 0..net.layers()[l].weight.as_slice().len() {
            let orig = net.layers()[l].weight.as_slice()[i];
            probe.layers_mut()[l].weight.as_mut_slice()[i] = orig + h;
            let up = full_objective(&probe, x, labels, weights, cfg);
            probe.layers_mut()[l].weight.as_mut_slice()[i] = orig - h;
            let down = full_objective(&probe, x, labels, weights, cfg);
            probe.layers_mut()[l].weight.as_mut_slice()[i] = orig;
            pairs.push((analytic.layers[l].weight.as_slice()[i], (up - down) / (2.0 * h)));
        }
        for i in 0..net.layers()[l].bias.len() {
            let orig = net.layers()[l].bias[i];
            probe.layers_mut()[l].bias[i] = orig + h;
            let up = full_objective(&probe, x, labels, weights, cfg);
            probe.layers_mut()[l].bias[i] = orig - h;
            let down = full_objective(&probe, x, labels, weights, cfg);
            probe.layers_mut()[l].bias[i] = orig;
            pairs.push((analytic.layers[l].bias[i], (up - down) / (2.0 * h)));
        }
    }
    // Components far below the largest one are dominated by difference noise.
    let floor = 1e-4 * pairs.iter().map(|p| p.0.abs()).fold(1e-12, f64::max);
    let mut worst: f64 = 0.0;
    for (g, fd) in pairs {
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(floor));
    }
    worst
}
