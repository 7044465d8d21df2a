mod common;

use proptest::prelude::*;
use rand::Rng;
use toploss::loss::{
    class_weights, combined_data_loss, cross_entropy, log_sum_exp, softmax, top2_hard_reference,
    top2_smooth_loss, ClassStats, ClassWeights, LossConfig,
};
use toploss::seed;

use common::*;

fn scores_and_label() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..=10).prop_flat_map(|n| (prop::collection::vec(-30.0f64..30.0, n), 0..n))
}

proptest! {
    #[test]
    fn weights_sum_to_one(counts in prop::collection::vec(0u64..100_000, 2..16)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let w = class_weights(&ClassStats::new(counts).unwrap());
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn smaller_classes_weigh_more(a in 1u64..10_000, b in 1u64..10_000, c in 1u64..10_000) {
        let w = class_weights(&ClassStats::new(vec![a, b, c]).unwrap());
        if a < b {
            prop_assert!(w.get(0) > w.get(1));
        }
    }

    #[test]
    fn top2_invariants((s, y) in scores_and_label(), tau in 0.1f64..10.0, shift in -100.0f64..100.0) {
        let out = top2_smooth_loss(&s, y, tau).unwrap();
        prop_assert!(out.value >= 0.0);
        let gsum: f64 = out.grad.iter().sum();
        prop_assert!(gsum.abs() < 1e-12);
        let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let moved = top2_smooth_loss(&shifted, y, tau).unwrap().value;
        prop_assert!((moved - out.value).abs() <= 1e-9 * out.value.max(1.0));
        let hard = top2_hard_reference(&s, y).unwrap();
        prop_assert!(hard >= 0.0);
        // Smooth and hard losses differ by at most τ·ln C(n,2).
        let pairs = (s.len() * (s.len() - 1) / 2) as f64;
        prop_assert!(out.value - hard <= tau * pairs.ln() + 1e-9);
        prop_assert!(hard - out.value <= tau * pairs.ln() + 1e-9);
    }

    #[test]
    fn combined_endpoints((s, y) in scores_and_label(), tau in 0.1f64..10.0) {
        let n = s.len();
        let w = ClassWeights::uniform(n);
        let ce = cross_entropy(&s, y).unwrap();
        let at0 = combined_data_loss(&s, y, &w, &LossConfig { lambda: 0.0, tau, mu: 0.25 }).unwrap();
        prop_assert_eq!(at0.value, ce.value);
        let top2 = top2_smooth_loss(&s, y, tau).unwrap();
        let at1 = combined_data_loss(&s, y, &w, &LossConfig { lambda: 1.0, tau, mu: 0.25 }).unwrap();
        prop_assert!((at1.value - top2.value / n as f64).abs() <= 1e-15 * top2.value.max(1.0));
    }

    #[test]
    fn cross_entropy_matches_softmax((s, y) in scores_and_label()) {
        let ce = cross_entropy(&s, y).unwrap();
        let p = softmax(&s);
        prop_assert!((ce.value - (log_sum_exp(&s) - s[y])).abs() <= 1e-12 * ce.value.max(1.0));
        for (m, g) in ce.grad.iter().enumerate() {
            let expected = p[m] - f64::from(u8::from(m == y));
            prop_assert!((g - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_enumerated_values() {
    let v = top2_smooth_loss(&[0.0, 0.0, 0.0], 0, 1.0).unwrap().value;
    assert!((v - ((2.0 + std::f64::consts::E) / 2.0).ln()).abs() < 1e-15);
    assert!((v - 0.858297).abs() < 1e-6);
    let v = top2_smooth_loss(&[10.0, 0.0, 0.0], 0, 1.0).unwrap().value;
    assert!((v - (-4f64).exp().mul_add(0.5, 1.0).ln()).abs() < 1e-15);
    assert!((v - 0.0091161).abs() < 1e-7);
    assert_eq!(top2_hard_reference(&[10.0, 0.0, 0.0], 0).unwrap(), 0.0);
    assert_eq!(top2_hard_reference(&[0.0, 5.0, 5.0], 0).unwrap(), 3.5);
    assert_eq!(top2_hard_reference(&[4.0, -1.0], 1).unwrap(), 0.0);
}

#[test]
fn enumeration_oracle_sample() {
    let mut rng = seed::rng(41);
    let mut oracle = Enumeration::new();
    for _ in 0..150 {
        let n = rng.gen_range(2..=10);
        let s = random_scores(&mut rng, n, 30.0);
        let y = rng.gen_range(0..n);
        let tau = rng.gen_range(0.1..10.0);
        let exact = oracle.top2(&s, y, tau);
        let err = oracle.relative_error(top2_smooth_loss(&s, y, tau).unwrap().value, &exact);
        assert!(err < 1e-9, "relative error {err:e} for s={s:?} y={y} tau={tau}");
    }
}

#[test]
fn extreme_scores_stay_finite() {
    for s in [[700.0, -700.0, 0.0, 1.0], [-1e6, 1e6, 1e6, -1e6], [1e300, 0.0, -1e300, 5.0]] {
        for y in 0..4 {
            for tau in [1e-3, 1.0, 100.0] {
                let out = top2_smooth_loss(&s, y, tau).unwrap();
                assert!(out.value.is_finite() && out.value >= 0.0);
                assert!(out.grad.iter().all(|g| g.is_finite()));
            }
            assert!(cross_entropy(&s, y).unwrap().value.is_finite());
        }
    }
}

#[test]
fn finite_difference_gradients() {
    let mut rng = seed::rng(42);
    let w = class_weights(&ClassStats::new(vec![24930, 2979, 4485, 6029, 4911, 2240, 6826]).unwrap());
    for _ in 0..100 {
        let s = random_scores(&mut rng, 7, 4.0);
        let y = rng.gen_range(0..7);
        let tau = rng.gen_range(0.3..4.0);
        let cfg = LossConfig { tau, ..LossConfig::default() };
        let top2 = top2_smooth_loss(&s, y, tau).unwrap().grad;
        let fd = central_difference(|p| top2_smooth_loss(p, y, tau).unwrap().value, &s, 1e-5);
        assert!(vector_relative_error(&top2, &fd, 1e-8) < 1e-5);
        let comb = combined_data_loss(&s, y, &w, &cfg).unwrap().grad;
        let fd = central_difference(|p| combined_data_loss(p, y, &w, &cfg).unwrap().value, &s, 1e-5);
        assert!(vector_relative_error(&comb, &fd, 1e-8) < 1e-5);
    }
}

#[test]
fn temperature_limit() {
    let mut rng = seed::rng(43);
    for _ in 0..100 {
        let s = random_scores(&mut rng, 7, 5.0);
        let y = rng.gen_range(0..7);
        let gap = (top2_smooth_loss(&s, y, 1e-3).unwrap().value - top2_hard_reference(&s, y).unwrap()).abs();
        assert!(gap <= 1e-3 * 21f64.ln() + 1e-6);
    }
}

#[test]
fn rejects_bad_inputs() {
    assert!(top2_smooth_loss(&[1.0, 2.0], 2, 1.0).is_err());
    assert!(top2_smooth_loss(&[1.0, f64::NAN], 0, 1.0).is_err());
    assert!(top2_smooth_loss(&[1.0, 2.0], 0, 0.0).is_err());
    assert!(top2_smooth_loss(&[1.0], 0, 1.0).is_err());
    assert!(cross_entropy(&[1.0, f64::INFINITY], 0).is_err());
    assert!(ClassStats::new(vec![0, 0]).is_err());
    assert!(ClassStats::new(vec![5]).is_err());
}
