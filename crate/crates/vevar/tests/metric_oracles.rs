//! Selection metrics against brute-force counting.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vevar::metrics::{compute_scores, function_bank_tpr, group_function_mse, score, ConfusionCounts};
use vevar::sim::{build_group_functions, SimConfig};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn scores_match_brute_force_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..1000 {
        let n = rng.random_range(1..60);
        let density = rng.random::<f64>();
        let truth: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < density).collect();
        let selected: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();

        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            if selected[i] && truth[i] {
                tp += 1;
            } else if selected[i] {
                fp += 1;
            } else if truth[i] {
                fn_ += 1;
            } else {
                tn += 1;
            }
        }
        let c = score(&selected, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp, fp, fn_, tn }, "case {case}");

        let s = compute_scores(&c);
        let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let pos = tp + fn_;
        let neg = fp + tn;
        let want_tpr = if pos > 0.0 { tp / pos } else { 0.0 };
        let want_fpr = if neg > 0.0 { fp / neg } else { 0.0 };
        let want_acc = (tp + tn) / n as f64;
        let f1_den = 2.0 * tp + fp + fn_;
        let want_f1 = if f1_den > 0.0 { 2.0 * tp / f1_den } else { 0.0 };
        let mcc_den = ((tp + fp) * pos * neg * (tn + fn_)).sqrt();
        let want_mcc = if mcc_den > 0.0 { (tp * tn - fp * fn_) / mcc_den } else { 0.0 };
        assert!(close(s.tpr, want_tpr) && s.flags.tpr == (pos == 0.0), "case {case} tpr");
        assert!(close(s.fpr, want_fpr) && s.flags.fpr == (neg == 0.0), "case {case} fpr");
        assert!(close(s.acc, want_acc), "case {case} acc");
        assert!(close(s.f1, want_f1) && s.flags.f1 == (f1_den == 0.0), "case {case} f1");
        assert!(close(s.mcc, want_mcc) && s.flags.mcc == (mcc_den == 0.0), "case {case} mcc");
    }
}

proptest! {
    #[test]
    fn mcc_bounded_and_one_only_when_perfect(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let s = compute_scores(&ConfusionCounts { tp, fp, fn_, tn });
        prop_assert!((-1.0..=1.0).contains(&s.mcc));
        let perfect = fp == 0 && fn_ == 0 && tp > 0 && tn > 0;
        prop_assert_eq!((s.mcc - 1.0).abs() < 1e-12, perfect);
    }

    #[test]
    fn class_swap_keeps_mcc_and_accuracy(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let a = compute_scores(&ConfusionCounts { tp, fp, fn_, tn });
        let b = compute_scores(&ConfusionCounts { tp: tn, fp: fn_, fn_: fp, tn: tp });
        prop_assert!((a.mcc - b.mcc).abs() < 1e-12);
        prop_assert_eq!(a.acc, b.acc);
    }

    #[test]
    fn constant_offset_gives_its_square(c in -2.0f64..2.0, n in 1usize..20, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let est: Vec<Vec<f64>> = truth.iter().map(|t| t.iter().map(|v| v + c).collect()).collect();
        let m = group_function_mse(&est, &truth, &[true, true, true], true, |_| true).unwrap();
        prop_assert!((m.mse - c * c).abs() < 1e-12);
        prop_assert_eq!(m.n_edges, 3);
    }
}

#[test]
fn band_recovery_examples() {
    let truth = build_group_functions(&SimConfig::default(), 3).unwrap();
    let all = truth.true_edges();
    for (g, edges) in all.iter().enumerate() {
        let bands = function_bank_tpr(edges, &truth, g).unwrap();
        assert!(bands.iter().all(|b| b.tpr().is_none_or(|t| t == 1.0)));

        let missed: Vec<bool> = (0..edges.len()).map(|j| edges[j] && truth.band(j) != 3).collect();
        let bands = function_bank_tpr(&missed, &truth, g).unwrap();
        for b in bands {
            match b.tpr() {
                Some(t) if b.band == 3 => assert_eq!(t, 0.0),
                Some(t) => assert_eq!(t, 1.0),
                None => {}
            }
        }
    }
    assert!(function_bank_tpr(&[true; 3], &truth, 0).is_err());
}
